"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Criterion 6 trains all three architectures at desk scale and takes roughly half
an hour on one CPU core.
"""

import itertools
import json
import time
from pathlib import Path

import numpy as np
import pytest

from bwmeta.architectures import (
    AutoencoderConfig,
    AutoencoderPair,
    Metamodel,
    MetamodelConfig,
    TrainedModel,
    mpnn_message_pass,
)
from bwmeta.cli import main
from bwmeta.metrics import deterministic_gap, normalized_errors, pearson, peak_summaries, samplewise_mse
from bwmeta.neural import (
    ConcreteDropout,
    Dense,
    GaussianHead,
    LSTMCell,
    ParamStore,
    Tensor,
    beta_nll_loss,
    concrete_mask,
    dense_forward,
    grad_check,
    lstm_sequence,
)
from bwmeta.neural import engine as E
from bwmeta.ode import rk4_fixed
from bwmeta.structure import bouc_wen_rate
from bwmeta.uncertainty import affine_time_variance, mc_predict, mc_predict_batch, propagate_to_time_domain
from bwmeta.wavelet import WaveletBasis, dwt, idwt
from conftest import TINY
from test_architectures import _encoder, _graph3, _toy_batch, _toy_model
from test_simulate import convergence_rate, sdof_amplitude_error
from test_structure import _sdof

ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture
def verdict(capsys):
    def emit(criterion: int, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}")
        assert ok, detail
    return emit


def test_criterion_1_wavelet(verdict):
    t0 = time.perf_counter()
    x = np.random.default_rng(2024).normal(size=(1024, 200))  # 200 signals as channels
    c = dwt(x, WaveletBasis(level=3), keep_details=True)
    rt = np.max(np.abs(idwt(c) - x))
    energy = np.sum(c.a**2, axis=0) + sum(np.sum(d**2, axis=0) for d in c.d)
    parseval = np.max(np.abs(energy - np.sum(x**2, axis=0)) / np.sum(x**2, axis=0))
    elapsed = time.perf_counter() - t0
    ok = rt < 1e-9 and parseval < 1e-9 and c.a.shape == (128, 200) and elapsed < 5.0
    verdict(1, ok, f"round trip {rt:.2e}, Parseval {parseval:.2e}, K={c.a.shape[0]}, {elapsed:.2f} s")


def test_criterion_2_integrator(verdict):
    t0 = time.perf_counter()
    amp = sdof_amplitude_error()
    rate = convergence_rate()
    plateau = 0.0
    for A, beta, gamma, nbw in [(1.0, 0.5, 0.5, 1.5), (1.0, 0.7, 0.1, 2.0), (1.2, 0.4, 0.4, 1.0)]:
        sys_ = _sdof(uy=0.01, bw_A=A, bw_beta=beta, bw_gamma=gamma, bw_n=nbw)
        z = rk4_fixed(lambda y, dd: bouc_wen_rate(sys_, dd, y), np.zeros(1), np.full(4001, 0.05), 0.005)
        plateau = max(plateau, abs(abs(z[-1, 0]) - (A / (beta + gamma)) ** (1 / nbw)))
    elapsed = time.perf_counter() - t0
    ok = amp < 1e-6 and 3.7 <= rate <= 4.3 and plateau < 1e-3 and elapsed < 30.0
    verdict(2, ok, f"SDOF amplitude rel. error {amp:.2e}, RK4 rate {rate:.3f}, "
                   f"plateau deviation {plateau:.2e}, {elapsed:.2f} s")


def test_criterion_3_gradients(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(77)
    store = ParamStore()
    dense = Dense(store, "d", 6, 4, "tanh", rng)
    x = Tensor(rng.normal(size=(3, 6)), requires_grad=True)
    R = rng.normal(size=(3, 4))
    e_dense = grad_check(lambda: E.tensor_sum(dense_forward(dense, x) * R), [x, dense.W, dense.b])

    # two LSTM layers over 4 steps, concrete dropout between them (fixed noise), beta-NLL head
    store = ParamStore()
    c1 = LSTMCell(store, "l0", 2, 3, rng)
    c2 = LSTMCell(store, "l1", 3, 3, rng)
    drop = ConcreteDropout(store, "p", init_p=0.2, temperature=0.1)
    head = GaussianHead(store, "h", 3, 3, 2, rng)
    xs = Tensor(rng.normal(size=(2, 4, 2)), requires_grad=True)
    u = rng.uniform(size=(2, 1, 3))
    target = rng.normal(size=(2, 4, 2))

    def seq():
        h = lstm_sequence(c1, xs)
        return head(lstm_sequence(c2, h * concrete_mask(drop, None, noise=u)))

    with E.no_grad():
        w = np.exp(0.5 * seq()[1].data)  # stop-gradient weights held fixed for differencing
    e_lstm = grad_check(lambda: beta_nll_loss(target, *seq(), 0.5, weights=w) + drop.regularization([c2.Wx], 3),
                        [xs] + [p for _, p in store])

    e_arch = {}
    for arch in ("mlp-lstm", "mpnn-lstm", "ae-lstm"):
        model = _toy_model(arch)
        r = np.random.default_rng(3)
        batch = _toy_batch(r)
        tgt = r.normal(size=(2, 4, model.config.n_out))
        noise = model.sample_noise(2, r)
        e_arch[arch] = grad_check(lambda: model.loss(batch, tgt, noise=noise), [p for _, p in model.store])
    elapsed = time.perf_counter() - t0
    ok = e_dense < 1e-6 and e_lstm < 1e-5 and max(e_arch.values()) < 1e-4 and elapsed < 60.0
    verdict(3, ok, f"dense {e_dense:.1e}, LSTM+dropout+head {e_lstm:.1e}, "
                   + ", ".join(f"{k} {v:.1e}" for k, v in e_arch.items()) + f", {elapsed:.1f} s")


def test_criterion_4_uncertainty(verdict, tiny_coeffs):
    t0 = time.perf_counter()
    cd = tiny_coeffs
    sc = cd.splits["test"]
    small = dict(fusion_hidden=(8,), lstm_hidden=8, head_hidden=8, mpnn_hidden=4, mpnn_steps=2, init_p=0.3)
    worst = 0.0
    for arch in ("mlp-lstm", "mpnn-lstm", "ae-lstm"):
        ae = AutoencoderPair(cd.n, 3, AutoencoderConfig(latent=1, hidden=4)) if arch == "ae-lstm" else None
        tr = TrainedModel(Metamodel(MetamodelConfig(arch=arch, n=cd.n, latent=1, **small), cd.neighbors, cd.virtual),
                          ae, cd.stats.to_dict(), cd.T)
        for p in mc_predict_batch(tr, sc.aF, sc.gamma, sc.nodes, sc.ids, h_mc=50, seed=0):
            worst = max(worst, np.max(np.abs(p.total - p.aleatoric - p.epistemic) / p.total))
    tr = TrainedModel(Metamodel(MetamodelConfig(arch="mlp-lstm", n=cd.n, **small), cd.neighbors, cd.virtual),
                      None, cd.stats.to_dict(), cd.T)
    sample = {"aF": sc.aF[0], "gamma": sc.gamma[0], "nodes": sc.nodes[0]}
    pred = mc_predict(tr, sample, h_mc=50, seed=1)
    est = propagate_to_time_domain(pred, tr, h_mc_gamma=10_000, seed=2)
    exact = affine_time_variance(pred, tr)
    mask = exact > 1e-3 * exact.max()
    prop = np.max(np.abs(est.variance[mask] / exact[mask] - 1.0))
    tr.model.force_dropout(0.0)
    epi0 = np.max(mc_predict(tr, sample, h_mc=50, seed=1).epistemic)
    elapsed = time.perf_counter() - t0
    ok = worst <= 2 * np.finfo(float).eps and epi0 == 0.0 and prop < 0.05 and elapsed < 60.0
    verdict(4, ok, f"decomposition rel. residual {worst:.1e}, p=0 epistemic max {epi0:.1e}, "
                   f"propagation vs closed form {100 * prop:.2f}%, {elapsed:.1f} s")


def test_criterion_5_mpnn_invariance(verdict):
    enc = _encoder(steps=3)
    g = _graph3()
    ref = mpnn_message_pass(g, enc).data
    worst = max(np.max(np.abs(mpnn_message_pass(g.permuted(list(perm) + [3]), enc).data - ref))
                for perm in itertools.permutations(range(3)))
    verdict(5, worst <= 1e-12, f"max deviation over all 6 story relabelings {worst:.1e}")


def _run(argv):
    code = main([str(a) for a in argv])
    assert code == 0, f"{argv[0]} exited with {code}"


def test_criterion_6_desk_scale(verdict, tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    timings = {}
    t0 = time.perf_counter()
    _run(["generate-data", "--config", ROOT / "configs" / "desk.json", "--out", root / "data", "--seed", 7])
    timings["generate"] = time.perf_counter() - t0
    reports = {}
    for arch in ("mlp-lstm", "mpnn-lstm", "ae-lstm"):
        t = time.perf_counter()
        _run(["train", "--data", root / "data", "--arch", arch, "--out", root / arch])
        _run(["evaluate", "--data", root / "data", "--checkpoint", root / arch, "--out", root / f"eval-{arch}"])
        reports[arch] = json.loads((root / f"eval-{arch}" / "metrics.json").read_text())
        timings[arch] = time.perf_counter() - t
    total = time.perf_counter() - t0

    lines, ok = [], True
    for arch, rep in reports.items():
        ratio, rho, cov = rep["gap"]["ratio"], rep["pearson"], rep["coverage"]
        good = ratio <= 0.5 and rho is not None and rho > 0.2 and 0.80 <= cov <= 0.995
        ok &= good
        lines.append(f"{arch}: MSE {rep['mse']:.4f} (baseline {rep['baseline_mse']:.4f}, ratio {ratio:.3f}), "
                     f"pearson {rho if rho is None else round(rho, 3)}, coverage {cov:.3f}, {timings[arch]:.0f} s")
    ae = reports["ae-lstm"]
    floor = ae["extra"]["ae_roundtrip_mse"]
    ok &= floor < ae["mse"]
    ok &= total < 45 * 60
    verdict(6, ok, "; ".join(lines) + f"; AE round trip {floor:.2e} vs AE-LSTM MSE {ae['mse']:.4f}; "
                   f"generate {timings['generate']:.0f} s, total {total / 60:.1f} min")


def _tree_bytes(path: Path, skip=("run.json",)) -> dict:
    return {p.relative_to(path).as_posix(): p.read_bytes() for p in sorted(path.rglob("*"))
            if p.is_file() and p.name not in skip}


def test_criterion_7_reproducibility(verdict, tmp_path):
    cfg = tmp_path / "experiment.json"
    cfg.write_text(json.dumps(TINY))
    tcfg = tmp_path / "train.json"
    tcfg.write_text(json.dumps({
        "metamodel": {"fusion_hidden": [8], "lstm_hidden": 8, "head_hidden": 8, "mpnn_hidden": 4,
                      "mpnn_steps": 2, "batch_size": 4, "max_epochs": 4},
        "autoencoder": {"latent": 1, "hidden": 4, "max_epochs": 4}}))
    trees = []
    for rep in ("a", "b"):
        _run(["generate-data", "--config", cfg, "--out", tmp_path / rep / "data", "--seed", 5])
        for arch in ("mlp-lstm", "mpnn-lstm", "ae-lstm"):
            _run(["train", "--data", tmp_path / rep / "data", "--arch", arch, "--out", tmp_path / rep / arch,
                  "--config", tcfg, "--seed", 9])
        trees.append(_tree_bytes(tmp_path / rep))
    same = trees[0].keys() == trees[1].keys() and all(trees[0][k] == trees[1][k] for k in trees[0])
    ckpts = sum(k.endswith(".bin") and not k.startswith("data/") for k in trees[0])
    verdict(7, same, f"{len(trees[0])} files byte-identical across replays "
                     f"(dataset, wavelet coefficients, {ckpts} checkpoint blobs)")


def test_criterion_8_metric_examples(verdict):
    checks = {}
    u = np.ones((1, 2, 1))
    checks["MSE/RMSE/MAE unit case"] = max(abs(v - 1.0) for v in normalized_errors(np.zeros_like(u), u, [1.0]))
    two = np.ones((2, 4, 1))
    pred = two.copy()
    pred[1] = 0.0
    checks["sample-wise MSE (0, 1)"] = np.max(np.abs(samplewise_mse(pred, two, [1.0]) - [0.0, 1.0]))
    err = np.array([0.1, -0.3, 0.2]).reshape(1, 3, 1)
    checks["AvgPeakError 0.3/0.6"] = abs(peak_summaries(err, [0.6])[0] - 0.5)
    x = np.array([1.0, 2.0, 3.0])
    checks["pearson y=x"] = abs(pearson(x, x) - 1.0)
    checks["pearson y=-x"] = abs(pearson(x, -x) + 1.0)
    checks["pearson (1,2,3),(2,4,7)"] = abs(pearson(x, [2.0, 4.0, 7.0]) - 5.0 / np.sqrt(2.0 * 114.0 / 9.0))
    checks["gap 0.001/0.01"] = abs(deterministic_gap(0.001, 0.01)["ratio"] - 0.1)
    worst = max(checks.values())
    verdict(8, worst <= 1e-12, f"{len(checks)} micro-examples, max deviation {worst:.1e}")
