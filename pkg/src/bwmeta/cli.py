"""Command-line entry point: ``bwmeta <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
Every subcommand writes ``run.json`` into its output directory with the full
argument set, seeds and a content hash of its inputs.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import BwMetaError, ConfigError, DataError

log = logging.getLogger("bwmeta")


# --------------------------------------------------------------------------- helpers

def _blob_hash(data: bytes) -> str:
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def content_hash(paths) -> str:
    """Git-style hash: SHA-1 over sorted ``(relative path, blob hash)`` pairs of every input file."""
    entries = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            files = sorted(f for f in p.rglob("*") if f.is_file())
            entries += [(f"{p.name}/{f.relative_to(p).as_posix()}", _blob_hash(f.read_bytes())) for f in files]
        elif p.is_file():
            entries.append((p.name, _blob_hash(p.read_bytes())))
        else:
            raise DataError(f"input {p} does not exist")
    h = hashlib.sha1()
    for name, digest in sorted(entries):
        h.update(f"{digest} {name}\n".encode())
    return h.hexdigest()


def write_run(out: Path, args: argparse.Namespace, inputs, extra: dict | None = None) -> None:
    argd = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"}
    run = {"version": __version__, "command": args.command, "args": argd,
           "inputs": {str(p): content_hash([p]) for p in inputs}, **(extra or {})}
    out.mkdir(parents=True, exist_ok=True)
    (out / "run.json").write_text(json.dumps(run, indent=2, sort_keys=True) + "\n")


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc


def _open_dataset(path):
    from .simulate import Dataset
    from .wavelet import transform_dataset
    ds = Dataset(path)
    return ds, transform_dataset(ds)


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output directory {out} is not writable: {exc}") from exc
    return out


# --------------------------------------------------------------------------- subcommands

def cmd_generate(args) -> int:
    from .simulate import ExperimentConfig, build_dataset
    from .wavelet import transform_dataset, write_coeff_dataset
    raw = _read_json(args.config)
    overrides = {k: v for k, v in (("dt", args.dt), ("strong_duration", args.duration),
                                   ("pad_duration", args.pad), ("intensity", args.intensity)) if v is not None}
    if overrides:
        raw["excitation"] = {**raw.get("excitation", {}), **overrides}
    config = ExperimentConfig.from_dict(raw)
    out = _out_dir(args.out)
    ds = build_dataset(config, out, args.seed, args.jobs)
    cd = transform_dataset(ds)
    write_coeff_dataset(cd, out / "wavelet")
    print(f"{'split':<14}{'count':>7}{'floor (norm. MSE)':>20}")
    for split, count in ds.manifest["counts"].items():
        floor = float(np.mean(cd.floor[split])) if split in cd.floor else float("nan")
        print(f"{split:<14}{count:>7}{floor:>20.3e}")
    st = ds.stats
    print("u_peak [m]:", " ".join(f"{v:.4g}" for v in st.u_peak))
    print(f"exc_peak [m/s^2]: {st.exc_peak:.4g}")
    print("param mean:", " ".join(f"{v:.4g}" for v in st.param_mean), " std:", " ".join(f"{v:.4g}" for v in st.param_std))
    if ds.manifest["failed"]:
        print(f"failed samples: {len(ds.manifest['failed'])}")
    write_run(out, args, [args.config], {"master_seed": args.seed, "experiment": config.to_dict()})
    return 0


def _train_configs(args, n: int):
    from .architectures import AutoencoderConfig, MetamodelConfig
    raw = _read_json(args.config) if args.config else {}
    unknown = set(raw) - {"metamodel", "autoencoder"}
    if unknown:
        raise ConfigError(f"unknown training config sections: {sorted(unknown)}")
    mm = dict(raw.get("metamodel", {}))
    ae = dict(raw.get("autoencoder", {}))
    mm.update(arch=args.arch, n=n)
    if args.seed is not None:
        mm["seed"] = args.seed
        ae["seed"] = args.seed
    if args.epochs is not None:
        mm["max_epochs"] = args.epochs
    ae_cfg = AutoencoderConfig.from_dict(ae)
    if args.arch == "ae-lstm":
        mm["latent"] = ae_cfg.latent
    return MetamodelConfig.from_dict(mm), ae_cfg


def cmd_train(args) -> int:
    from .architectures import AutoencoderPair, save_autoencoder, save_checkpoint, train_autoencoder, train_metamodel
    ds, cd = _open_dataset(args.data)
    config, ae_cfg = _train_configs(args, cd.n)
    out = _out_dir(args.out)
    ae, ae_path = None, None
    if config.arch == "ae-lstm":
        ae = train_autoencoder(cd, AutoencoderPair(cd.n, config.n_param, ae_cfg), ae_cfg)
        ae_path = save_autoencoder(ae, out / "autoencoder")
        print(f"autoencoder val reconstruction error {ae.val_error:.4e}")
    trained = train_metamodel(cd, config, ae, out / "history.csv")
    save_checkpoint(trained, out / "model", ae_path)
    print(f"{config.arch}: {trained.epochs} epochs, best val loss {trained.val_loss:.5f}, "
          f"dropout p {', '.join(f'{p:.3f}' for p in trained.model.dropout_p)}"
          + (" (early stop)" if trained.stopped_early else ""))
    write_run(out, args, [args.data] + ([args.config] if args.config else []),
              {"metamodel": config.to_dict(), "autoencoder": ae_cfg.to_dict() if ae else None})
    return 0


def _load_model(path):
    from .architectures import load_checkpoint
    p = Path(path)
    if p.is_dir():
        p = p / "model.json"
    return load_checkpoint(p)


def cmd_evaluate(args) -> int:
    from .evaluation import evaluate
    from .metrics import write_report
    ds, cd = _open_dataset(args.data)
    trained = _load_model(args.checkpoint)
    out = _out_dir(args.out)
    report, _ = evaluate(trained, ds, cd, args.split, args.h_mc, args.h_mc_gamma, args.seed)
    write_report(report, out)
    print(f"{report.arch} on {args.split}: MSE {report.mse:.4e} RMSE {report.rmse:.4e} MAE {report.mae:.4e}")
    print(f"deterministic baseline MSE {report.baseline_mse:.4e} (ratio {report.gap['ratio']:.3f}); "
          f"coverage {report.coverage:.3f}; pearson "
          + ("undefined" if report.pearson is None else f"{report.pearson:.3f}"))
    write_run(out, args, [args.data, Path(args.checkpoint)], {"seed": args.seed})
    return 0


PREDICT_COLUMNS = ["t", "reference", "reference_deterministic", "mean", "lower95", "upper95", "abs_error", "variance"]


def cmd_predict(args) -> int:
    from .evaluation import deterministic_references
    from .simulate import hash64
    from .uncertainty import mc_predict_batch, propagate_to_time_domain, write_estimate
    ds, cd = _open_dataset(args.data)
    trained = _load_model(args.checkpoint)
    out = _out_dir(args.out)
    where = {sid: (name, i) for name, sc in cd.splits.items() for i, sid in enumerate(sc.ids)}
    missing = [s for s in args.ids if s not in where]
    if missing:
        raise DataError(f"unknown sample id(s): {', '.join(missing)}")
    t = np.arange(cd.T) * ds.dt
    for sid in args.ids:
        name, i = where[sid]
        sc = cd.splits[name]
        nodes = sc.nodes[i:i + 1] if trained.arch == "mpnn-lstm" else None
        pred = mc_predict_batch(trained, sc.aF[i:i + 1], sc.gamma[i:i + 1], nodes, [sid], args.h_mc, args.seed)[0]
        est = propagate_to_time_domain(pred, trained, args.h_mc_gamma, hash64(args.seed, "prop", sid), sc.gamma[i])
        write_estimate(est, out / f"{sid}-estimate", {"sample_id": sid, "h_mc": args.h_mc, "arch": trained.arch})
        ref = sc.u[i]
        if name == "deterministic":
            det = ref
        else:
            try:
                det = deterministic_references(ds, cd, [sid])[0]
            except DataError:
                det = np.full_like(ref, np.nan)
        lo, hi = est.lower, est.upper
        for d in range(cd.n):
            with open(out / f"{sid}-dof{d + 1}.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(PREDICT_COLUMNS)
                for k in range(cd.T):
                    w.writerow([f"{t[k]:.6g}", *(repr(float(v)) for v in (
                        ref[k, d], det[k, d], est.mean[k, d], lo[k, d], hi[k, d],
                        abs(ref[k, d] - est.mean[k, d]), est.variance[k, d]))])
        print(f"{sid}: wrote {cd.n} CSV files")
    write_run(out, args, [args.data, Path(args.checkpoint)], {"seed": args.seed})
    return 0


def cmd_latent_sweep(args) -> int:
    from .architectures import AutoencoderConfig, select_latent_width
    _, cd = _open_dataset(args.data)
    out = _out_dir(args.out)
    raw = _read_json(args.config).get("autoencoder", {}) if args.config else {}
    cfg = AutoencoderConfig.from_dict({**raw, "strict": False, "seed": args.seed})
    chosen, table = select_latent_width(cd, args.widths, cfg)
    with open(out / "latent_sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["latent", "val_error"])
        for row in table:
            w.writerow([row["latent"], repr(float(row["val_error"]))])
    for row in table:
        print(f"n_r={row['latent']:<3d} val error {row['val_error']:.4e}")
    print(f"selected n_r = {chosen}")
    write_run(out, args, [args.data] + ([args.config] if args.config else []), {"selected": chosen, "table": table})
    return 0


# --------------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    from .architectures import ARCHITECTURES
    p = argparse.ArgumentParser(prog="bwmeta", description="Bouc-Wen wavelet-LSTM metamodels with MC-dropout UQ.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress (training epochs etc.)")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-data", help="simulate a dataset of excitation/response pairs")
    g.add_argument("--config", required=True, type=Path, help="experiment JSON (layout, parameters, excitation, counts)")
    g.add_argument("--out", required=True, type=Path, help="dataset directory to create")
    g.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    g.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    g.add_argument("--dt", type=float, help="overrides excitation dt [s]")
    g.add_argument("--duration", type=float, help="overrides the strong-motion duration [s]")
    g.add_argument("--pad", type=float, help="overrides the zero-pad duration [s]")
    g.add_argument("--intensity", type=float, help="overrides the peak ground acceleration [m/s^2]")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train one metamodel (ae-lstm trains the autoencoder first)")
    t.add_argument("--data", required=True, type=Path, help="dataset directory")
    t.add_argument("--arch", required=True, choices=ARCHITECTURES)
    t.add_argument("--out", required=True, type=Path, help="directory for checkpoints and history.csv")
    t.add_argument("--config", type=Path, help='training JSON {"metamodel": {...}, "autoencoder": {...}}')
    t.add_argument("--seed", type=int, help="overrides the config seeds")
    t.add_argument("--epochs", type=int, help="overrides metamodel max_epochs")
    t.set_defaults(func=cmd_train)

    for name, func, helptext in (("evaluate", cmd_evaluate, "metrics of a trained model on one split"),
                                 ("predict", cmd_predict, "time-domain estimates and CSV traces for samples")):
        e = sub.add_parser(name, help=helptext)
        e.add_argument("--data", required=True, type=Path, help="dataset directory")
        e.add_argument("--checkpoint", required=True, type=Path, help="model.json or the training output directory")
        e.add_argument("--out", required=True, type=Path, help="output directory")
        e.add_argument("--h-mc", type=int, default=50, help="MC-dropout passes (default 50)")
        e.add_argument("--h-mc-gamma", type=int, default=50, help="propagation draws (default 50)")
        e.add_argument("--seed", type=int, default=0)
        if name == "evaluate":
            e.add_argument("--split", default="test", help="split to evaluate (default test)")
        else:
            e.add_argument("--ids", nargs="+", required=True, help="sample ids, e.g. test-00003")
        e.add_argument("--jobs", type=int, default=1, help="accepted for symmetry; MC passes run batched")
        e.set_defaults(func=func)

    s = sub.add_parser("latent-sweep", help="autoencoder reconstruction error versus latent width")
    s.add_argument("--data", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--widths", type=int, nargs="+", default=[1, 2, 3, 4, 5])
    s.add_argument("--config", type=Path, help="training JSON; only the autoencoder section is used")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_latent_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except BwMetaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
