"""Command-line entry point: ``streamrom <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 data or dimension error,
4 training divergence, 5 file-system error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, PipelineConfig, load_config
from .metrics import error_curves, write_error_csv
from .nn.training import TrainingDiverged
from .pipeline import (
    BundleFormatError,
    IncompleteBundle,
    ModelBundle,
    StageError,
    cae_stage,
    compress_stage,
    ffnn_stage,
    forecast,
    load_bundle,
    lstm_stage,
    nas_stage,
    offline_train,
    online_predict,
    reduced_training_data,
    save_bundle,
    write_probe_csv,
)
from .snapshots import (
    Grid2D,
    SnapshotFormatError,
    SnapshotSet,
    cd_analytic_field,
    cd_time_grid,
    fit_standardizer,
    generate_cd_snapshots,
    read_snapshot_file,
    sample_parameters,
    write_snapshot_file,
)
from .svd_stream import compression_report

log = logging.getLogger("streamrom")

EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED, EXIT_IO = 2, 3, 4, 5


def _parse_mu(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError as exc:
        raise ConfigError(f"--mu expects comma-separated numbers, got {text!r}") from exc


def _config(args) -> PipelineConfig:
    return load_config(args.config) if getattr(args, "config", None) else PipelineConfig()


def _snapshots(args, cfg: PipelineConfig) -> SnapshotSet:
    path = args.snapshots or cfg.data.snapshot_file
    if not path:
        raise ConfigError("no snapshot file given (--snapshots or [data].snapshot_file)")
    return read_snapshot_file(path)


# --------------------------------------------------------------------------- subcommands

def cmd_generate(args) -> dict:
    cfg = _config(args)
    d = cfg.data
    grid = Grid2D(d.nx, d.ny)
    if args.mu:
        mus = np.atleast_2d(_parse_mu(args.mu))
        times = cfg.data.T / d.n_times * np.arange(1, (args.steps or d.n_times) + 1)
        test = np.empty((0, mus.shape[1]))
    else:
        params = sample_parameters(d.bounds, d.m, d.n_test, cfg.run.seed)
        mus, test, times = params.training, params.testing, cd_time_grid(d.T, d.n_times)
    snaps = generate_cd_snapshots(grid, mus, times)
    digest = write_snapshot_file(snaps, args.out)
    manifest = {
        "file": str(args.out), "sha256": digest, "columns": snaps.n_columns, "nodes": snaps.n_nodes,
        "training_parameters": mus.tolist(), "testing_parameters": test.tolist(), "n_times": int(times.size),
    }
    Path(str(args.out) + ".manifest.json").write_text(json.dumps(manifest, indent=2))
    log.info("wrote %d snapshot columns to %s", snaps.n_columns, args.out)
    return manifest


def _base_bundle(cfg: PipelineConfig, snaps: SnapshotSet):
    states, reduced = compress_stage(cfg, snaps)
    bundle = ModelBundle(
        config=cfg,
        bases=[s.U for s in states],
        scalers=fit_standardizer(reduced.reshape(reduced.shape[0], -1)),
        times=snaps.times.copy(),
        train_params=snaps.parameters.copy(),
        test_params=np.empty((0, snaps.parameters.shape[1])),
        provenance={"seed": cfg.run.seed, "data_sha256": snaps.checksum()},
    )
    from . import __version__

    bundle.provenance["version"] = __version__
    return bundle, states


def cmd_compress(args) -> dict:
    cfg = _config(args)
    if args.eps is not None:
        cfg.svd.eps = args.eps
    if args.subset_size is not None:
        cfg.svd.subset_size = args.subset_size
    snaps = _snapshots(args, cfg)
    cfg.data.n_times = snaps.n_times
    cfg.validate()
    bundle, states = _base_bundle(cfg, snaps)
    digest = save_bundle(bundle, args.out)
    rep = compression_report(states[0], snaps.matrix(0))
    per_col = np.array([e for _, e in rep.eps_l2_curve])
    s = cfg.svd.subset_size
    if args.report:
        with open(args.report, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["block", "rank", "cols_seen", "cpr", "eps_l2"])
            for b, (k, cols, cpr) in enumerate(states[0].history):
                w.writerow([b + 1, k, cols, repr(cpr), repr(float(per_col[b * s:(b + 1) * s].mean()))])
    print(f"basis rank: {states[0].k}")
    return {"rank": states[0].k, "ranks": [st.k for st in states], "blocks": len(states[0].history),
            "bundle_sha256": digest}


def cmd_train(args) -> dict:
    stage = args.stage
    if stage == "all" and not Path(args.bundle).exists():
        cfg = _config(args)
        snaps = _snapshots(args, cfg)
        bundle, report = offline_train(cfg, snaps)
        digest = save_bundle(bundle, args.bundle)
        return {"stage": "all", "bundle_sha256": digest, **report.summary()}
    bundle = load_bundle(args.bundle)
    if args.config:
        bundle.config = load_config(args.config)
    cfg = bundle.config
    snaps = _snapshots(args, cfg)
    reduced = reduced_training_data(bundle.bases, snaps)
    out: dict = {"stage": stage}
    stages = ["cae", "lstm", "ffnn"] if stage == "all" else [stage]
    for name in stages:
        if name == "cae":
            h = cae_stage(bundle, reduced)
        elif name == "lstm":
            h = lstm_stage(bundle, reduced)
        else:
            activation = args.activation
            if activation is None and stage == "all" and cfg.nas.enabled:
                activation = nas_stage(bundle, reduced).winner
                out["nas_winner"] = activation
            h = ffnn_stage(bundle, reduced, activation)
        out[f"{name}_best_train"], out[f"{name}_best_val"] = h.best_train, h.best_val
        log.info("%s: best train %.3e, best val %.3e", name, h.best_train, h.best_val)
    out["bundle_sha256"] = save_bundle(bundle, args.bundle)
    return out


def cmd_nas(args) -> dict:
    bundle = load_bundle(args.bundle)
    if args.config:
        bundle.config = load_config(args.config)
    snaps = _snapshots(args, bundle.config)
    report = nas_stage(bundle, reduced_training_data(bundle.bases, snaps))
    report.to_csv(args.out)
    for row in report.to_rows():
        log.info("%-10s train %.4e  val %.4e%s", row["activation"], row["train_loss"], row["val_loss"],
                 "  <- winner" if row["winner"] else "")
    return {"winner": report.winner, "trials": report.to_rows()}


def _predict(args, fn) -> dict:
    bundle = load_bundle(args.bundle)
    mu = _parse_mu(args.mu)
    steps = args.steps if args.steps is not None else bundle.times.size
    pred = fn(bundle, mu, steps)
    digest = write_snapshot_file(pred.to_snapshot_set(), args.out)
    return {"mu": mu.tolist(), "steps": int(steps), "extrapolated_steps": int(pred.extrapolated.sum()),
            "sha256": digest}


def cmd_predict(args) -> dict:
    return _predict(args, online_predict)


def cmd_forecast(args) -> dict:
    return _predict(args, forecast)


def cmd_evaluate(args) -> dict:
    truth = read_snapshot_file(args.truth)
    pred = read_snapshot_file(args.prediction)
    if truth.data.shape != pred.data.shape:
        raise ValueError(f"truth {truth.data.shape} and prediction {pred.data.shape} differ in shape")
    out = {"parameters": []}
    for j in range(truth.m):
        fields_t = np.moveaxis(truth.data[:, j], 0, -1)
        fields_p = np.moveaxis(pred.data[:, j], 0, -1)
        if truth.n_components == 1:
            fields_t, fields_p = fields_t[..., 0], fields_p[..., 0]
        rep = error_curves(fields_t, fields_p, truth.times)
        if args.out:
            path = Path(args.out)
            write_error_csv(rep, path if truth.m == 1 else path.with_name(f"{path.stem}_{j}{path.suffix}"))
        out["parameters"].append({
            "mu": truth.parameters[j].tolist(),
            "max_eps_rel": float(rep.eps_rel.max()), "max_eps_nrms": float(rep.eps_nrms.max()),
            "max_eps_l2": float(rep.eps_l2.max()), "final_eps_rel": float(rep.eps_rel[-1]),
        })
        print(json.dumps(out["parameters"][-1]))
    return out


def cmd_export_plots(args) -> dict:
    bundle = load_bundle(args.bundle)
    mu = _parse_mu(args.mu)
    steps = args.steps if args.steps is not None else bundle.times.size
    pred = online_predict(bundle, mu, steps)
    outdir = Path(args.out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    with open(outdir / "latents.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "extrapolated"] + [f"z{k}" for k in range(pred.latents.shape[1])])
        for t, x, z in zip(pred.times, pred.extrapolated, pred.latents):
            w.writerow([repr(float(t)), int(x)] + [repr(float(v)) for v in z])
    written.append("latents.csv")
    truth = None
    if args.truth:
        snaps = read_snapshot_file(args.truth)
        truth = snaps.data[0, 0]
    elif args.analytic:
        d = bundle.config.data
        grid = Grid2D(d.nx, d.ny)
        truth = np.stack([cd_analytic_field(grid, mu, t) for t in pred.times])
    if truth is not None:
        if truth.shape != pred.fields.shape:
            raise ValueError(f"truth {truth.shape} does not match prediction {pred.fields.shape}")
        write_error_csv(error_curves(truth, pred.fields, pred.times), outdir / "errors.csv")
        written.append("errors.csv")
    probes = [int(k) for k in args.probes.split(",")] if args.probes else [bundle.n_nodes // 2]
    write_probe_csv(outdir / "probes.csv", pred, probes, truth)
    written.append("probes.csv")
    return {"files": written, "out_dir": str(outdir)}


# --------------------------------------------------------------------------- wiring

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="streamrom", description=__doc__.splitlines()[0])
    p.add_argument("--summary", help="append a JSON-lines summary record to this file")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write analytic convection-diffusion snapshots")
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.add_argument("--mu", help="generate for this parameter instead of the LHS training set")
    g.add_argument("--steps", type=int, help="number of time steps when --mu is given")
    g.set_defaults(func=cmd_generate)

    c = sub.add_parser("compress", help="streaming SVD of a snapshot file")
    c.add_argument("--config")
    c.add_argument("--snapshots")
    c.add_argument("--eps", type=float)
    c.add_argument("--subset-size", type=int)
    c.add_argument("--out", required=True, help="bundle holding the basis and standardizer")
    c.add_argument("--report", help="CSV with one row per absorbed block")
    c.set_defaults(func=cmd_compress)

    t = sub.add_parser("train", help="train one stage or all stages into a bundle")
    t.add_argument("--config")
    t.add_argument("--snapshots")
    t.add_argument("--bundle", required=True)
    t.add_argument("--stage", choices=["cae", "lstm", "ffnn", "all"], default="all")
    t.add_argument("--activation", help="FFNN activation (skips the search)")
    t.set_defaults(func=cmd_train)

    n = sub.add_parser("nas", help="activation search for the parameter-to-latent network")
    n.add_argument("--config")
    n.add_argument("--snapshots")
    n.add_argument("--bundle", required=True)
    n.add_argument("--out", required=True)
    n.set_defaults(func=cmd_nas)

    for name, fn, helptext in (("predict", cmd_predict, "predict fields within the training horizon"),
                               ("forecast", cmd_forecast, "roll out past the training horizon")):
        q = sub.add_parser(name, help=helptext)
        q.add_argument("--bundle", required=True)
        q.add_argument("--mu", required=True)
        q.add_argument("--steps", type=int)
        q.add_argument("--out", required=True)
        q.set_defaults(func=fn)

    e = sub.add_parser("evaluate", help="error indicators between two snapshot files")
    e.add_argument("--truth", required=True)
    e.add_argument("--prediction", required=True)
    e.add_argument("--out", help="CSV of error curves")
    e.set_defaults(func=cmd_evaluate)

    x = sub.add_parser("export-plots", help="CSV data for latent trajectories, error curves and probes")
    x.add_argument("--bundle", required=True)
    x.add_argument("--mu", required=True)
    x.add_argument("--steps", type=int)
    x.add_argument("--out-dir", required=True)
    x.add_argument("--truth")
    x.add_argument("--analytic", action="store_true", help="compare against the analytic CD field")
    x.add_argument("--probes", help="comma-separated node indices")
    x.set_defaults(func=cmd_export_plots)
    return p


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, TrainingDiverged):
        return EXIT_DIVERGED
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, OSError):
        return EXIT_IO
    if isinstance(exc, StageError) and isinstance(exc.__cause__, BaseException):
        return _exit_code(exc.__cause__)
    return EXIT_DATA


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(message)s")
    try:
        result = args.func(args)
    except (ConfigError, SnapshotFormatError, BundleFormatError, IncompleteBundle, StageError,
            TrainingDiverged, ValueError, OSError) as exc:
        code = _exit_code(exc)
        log.error("%s failed (exit %d): %s", args.command, code, exc)
        if args.summary:
            _append_summary(args.summary, {"command": args.command, "status": "error", "exit": code,
                                           "error": str(exc)})
        return code
    if args.summary:
        try:
            _append_summary(args.summary, {"command": args.command, "status": "ok", **result})
        except OSError as exc:
            log.error("cannot write summary: %s", exc)
            return EXIT_IO
    return 0


def _append_summary(path, record: dict) -> None:
    with open(path, "a") as fh:
        fh.write(json.dumps(record, sort_keys=True, default=float) + "\n")


if __name__ == "__main__":
    sys.exit(main())
