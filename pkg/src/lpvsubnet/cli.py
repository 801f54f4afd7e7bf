"""Command line entry point: generate, train, evaluate, export-plotdata.

Exit codes: 0 on success, 1 when a run fails (divergence, aborted
training), 2 for invalid configuration, arguments or input files.
"""
import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import benchmark as bm
from . import plotdata
from .config import ConfigError, load_config
from .lpv_model import DivergenceError, LpvSubnet, canonical_mode
from .metrics import fit_report
from .serialization import load_model, save_model
from .trainer import TrainingAborted, evaluate_prediction, train_multistart

log = logging.getLogger("lpvsubnet")

DATA_FILES = {role: f"{role}.csv" for role in bm.SPLIT_ROLES}


class UsageError(Exception):
    pass


def _system(cfg):
    prm = dict(cfg.benchmark.params)
    try:
        if cfg.benchmark.system == "pendulum":
            return bm.builtin_pendulum(**prm)
        return bm.builtin_lti(**prm)
    except TypeError as exc:
        raise ConfigError(f"benchmark.params: {exc}") from None


def _load_cfg(args):
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "mode", None):
        cfg.model.mode = canonical_mode(args.mode)
    return cfg.validate()


def cmd_generate(args):
    cfg = _load_cfg(args)
    sys_def = _system(cfg)
    ex = cfg.excitation
    excitation = bm.ExcitationConfig(ex.amplitude, tuple(ex.band), ex.ts or sys_def.ts, ex.sigma_v)
    sp = cfg.splits
    sets = bm.split_dataset(sys_def, excitation, sp.n_est, sp.n_val, sp.n_test, master_seed=cfg.seed,
                            snr_db=cfg.noise.snr_db, sigma_e=cfg.noise.sigma_e, noise=cfg.noise.structure)
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    for ds in sets:
        path = out / DATA_FILES[ds.role]
        bm.write_dataset(ds, path)
        print(f"wrote {path} ({len(ds)} samples)")
    return 0


def _read(path):
    path = Path(path)
    if not path.exists():
        raise UsageError(f"dataset not found: {path} (run 'generate' first?)")
    return bm.read_dataset(path)


def build_network(cfg, est, seed=None):
    m = cfg.model
    net = LpvSubnet.build(m.n_x, est.n_u, est.n_y, n_p=m.n_p, lag=m.lag, noise=m.noise, mode=m.mode,
                          n_px=m.n_px, hidden=tuple(m.hidden), encoder_hidden=tuple(m.encoder_hidden),
                          seed=cfg.seed if seed is None else seed)
    stats = est.norm or est.statistics()
    net.model.set_normalization(stats["u_mean"], stats["u_std"], stats["y_mean"], stats["y_std"])
    return net


def cmd_train(args):
    cfg = _load_cfg(args)
    out = cfg.out
    est, val = _read(out / DATA_FILES["estimation"]), _read(out / DATA_FILES["validation"])
    if cfg.model.mode == "oracle" and (est.p is None or val.p is None):
        raise UsageError("oracle mode needs p columns in the estimation and validation data")
    tcfg = cfg.training_config(threads=args.threads)
    with open(out / "history.csv", "w") as tel:
        result = train_multistart(lambda seed: build_network(cfg, est, seed), est, val, tcfg, telemetry=tel)
    net, hist = result.net, result.history
    for i, seed, loss, fit in result.screening:
        print(f"start {i} (seed {seed}): screening val loss {loss:.4e}, BFR {fit:.2f}%")
    save_model(net, out / "model.json")
    if hist.best_update < 0:
        _, val_bfr = evaluate_prediction(net, val)
    else:
        val_bfr = hist.best_val_bfr
    print(f"wrote {out / 'model.json'}")
    print(f"validation BFR {val_bfr:.2f}% (best at update {max(hist.best_update, 0)})")
    return 0


def _prediction_csv(path, ds, res, err):
    n_y = ds.n_y
    cols = (["k"] + [f"y_{i + 1}" for i in range(n_y)] + [f"yhat_{i + 1}" for i in range(n_y)]
            + [f"e_{i + 1}" for i in range(n_y)] + [f"phat_{i + 1}" for i in range(res.p_hat.shape[1])])
    y = ds.y[res.start:]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for j in range(len(res.y_hat)):
            vals = [*y[j], *res.y_hat[j], *err[j], *res.p_hat[j]]
            fh.write(str(res.start + j) + "," + ",".join(repr(float(v)) for v in vals) + "\n")


def cmd_evaluate(args):
    cfg = _load_cfg(args) if args.config else None
    model_path = Path(args.model) if args.model else (cfg.out / "model.json" if cfg else None)
    data_path = Path(args.data) if args.data else (cfg.out / DATA_FILES["test"] if cfg else None)
    if model_path is None or data_path is None:
        raise UsageError("evaluate needs --model and --data (or --config)")
    if not model_path.exists():
        raise UsageError(f"model file not found: {model_path}")
    net = load_model(model_path)
    ds = _read(data_path)
    mode = canonical_mode(args.mode) if args.mode else net.mode
    if (ds.n_u, ds.n_y) != (net.model.n_u, net.model.n_y):
        raise UsageError(f"dataset has (n_u, n_y) = {(ds.n_u, ds.n_y)}, model expects "
                         f"{(net.model.n_u, net.model.n_y)}")
    p = None
    if mode == "oracle":
        if ds.p is None:
            raise UsageError("oracle mode needs p columns in the dataset")
        if ds.p.shape[1] != net.model.n_p:
            raise UsageError(f"dataset has {ds.p.shape[1]} p columns, model expects {net.model.n_p}")
        p = ds.p
    if len(ds) < net.enc.lag + 3:
        raise UsageError(f"dataset shorter than the encoder window plus two samples ({net.enc.lag + 3})")
    res = net.simulate(ds.u, ds.y, p=p, mode=mode)
    y = ds.y[res.start:]
    snr = ds.meta.get("snr_db")
    report = fit_report(y, res.y_hat, float("inf") if snr is None else snr)
    out = Path(args.out) if args.out else data_path.with_name(data_path.stem + "_prediction.csv")
    _prediction_csv(out, ds, res, report.errors)
    print(f"wrote {out}")
    print(report)
    return 0


def cmd_export_plotdata(args):
    inputs = list(args.inputs)
    out = args.out
    if args.config:
        cfg = _load_cfg(args)
        if not inputs:
            inputs = [cfg.out / "history.csv", cfg.out / "test_prediction.csv"]
        out = out or cfg.out / "plotdata.csv"
    if not inputs or not out:
        raise UsageError("export-plotdata needs input CSVs and --out (or --config)")
    for path in inputs:
        if not Path(path).exists():
            raise UsageError(f"input not found: {path}")
    n = plotdata.export(inputs, out)
    print(f"wrote {out} ({n} observations)")
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="lpvsubnet", description="LPV state-space identification experiments.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="experiment config (JSON)")
        p.add_argument("--seed", type=int, help="override the master seed")

    g = sub.add_parser("generate", help="write estimation/validation/test datasets")
    common(g)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model on the generated data")
    common(t)
    t.add_argument("--mode", choices=["self", "external", "oracle", "self_scheduled"])
    t.add_argument("--threads", type=int, help="concurrent rollout chunks (1 = bit-reproducible)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="simulate a model on a dataset and report the fit")
    common(e, config_required=False)
    e.add_argument("--model")
    e.add_argument("--data")
    e.add_argument("--out", help="prediction CSV (default: <data>_prediction.csv)")
    e.add_argument("--mode", choices=["self", "external", "oracle", "self_scheduled"])
    e.set_defaults(func=cmd_evaluate)

    x = sub.add_parser("export-plotdata", help="convert history/prediction CSVs to tidy long format")
    common(x, config_required=False)
    x.add_argument("inputs", nargs="*")
    x.add_argument("--out")
    x.set_defaults(func=cmd_export_plotdata)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if getattr(args, "threads", None) is not None and args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TrainingAborted, DivergenceError, bm.SystemExplosionError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
