"""Command-line entry point: ``cbswri {forward,invert,validate,budget,img}``.

Exit codes: 0 success, 2 configuration error, 3 solver divergence,
4 validation failure.
"""
from __future__ import annotations

import argparse
import logging
import platform
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .cbs import CbsDivergenceError, CbsSolveReport, HelmholtzOperator
from .config import ConfigError, RunConfig, load_config
from .continuation import expand_schedule, predict_budget, run_inversion
from .grid import DataMatrix, contrast_pad, suggest_pad
from .io import (FormatError, data_filename, file_digest, load_data_dir, load_model, read_geometry, read_grid,
                 save_data, save_model, write_csv, write_manifest, write_pgm)
from .oracle import OracleCapError
from .validation import default_battery
from .wri import IterationLog

log = logging.getLogger("cbswri")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_VALIDATION = 0, 2, 3, 4


def _pad_for(cfg: RunConfig, model_path: Path, fmin: float) -> int:
    if isinstance(cfg.pad, int):
        return cfg.pad
    probe = load_model(model_path, 0, None, cfg.model_units)
    if cfg.pad == "contrast":
        return contrast_pad(probe.values, probe.grid.dx, fmin, cfg.absorb_db)
    return suggest_pad(probe.grid.dx, float(np.max(probe.velocity)), fmin)


def _inputs_manifest(cfg: RunConfig, *keys: str) -> dict:
    out = {}
    for k in keys:
        p = getattr(cfg, k)
        if p is not None and Path(p).is_file():
            out[f"input.{k}"] = str(p)
            out[f"input.{k}.sha256"] = file_digest(p)
    return out


def _base_manifest(cfg: RunConfig, command: str) -> dict:
    return {"command": command, "version": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "seed": cfg.seed, **cfg.echo()}


def cmd_forward(cfg: RunConfig) -> int:
    cfg.require("model", "geometry")
    if not cfg.frequencies:
        raise ConfigError("forward needs 'frequencies'")
    geometry = read_geometry(cfg.geometry)
    pad = _pad_for(cfg, cfg.model, min(cfg.frequencies))
    model = load_model(cfg.model, pad, cfg.bounds, cfg.model_units)
    geometry.validate(model.grid)
    model.grid.check_sampling(float(np.min(model.velocity)), max(cfg.frequencies))
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    P = geometry.observation(model.grid)
    b = geometry.source_fields(model.grid)
    rows = []
    for f in cfg.frequencies:
        op = HelmholtzOperator(model, 2 * np.pi * f, cfg.cbs())
        u, reports = op.solve_many(b)
        save_data(out / data_filename(f), DataMatrix(f, P.sample(u).T))
        for s, rep in enumerate(reports):
            rows.append([s] + rep.csv_row(f))
        log.info("%g Hz: iterations %s", f, [r.iters for r in reports])
    write_csv(out / "solves.csv", ("source",) + CbsSolveReport.CSV_HEADER, rows)
    write_manifest(out / "manifest.txt", {**_base_manifest(cfg, "forward"), "pad": pad,
                                          **_inputs_manifest(cfg, "model", "geometry"),
                                          "forward_solves": len(rows)})
    return EXIT_OK


def cmd_invert(cfg: RunConfig) -> int:
    cfg.require("model", "geometry", "data_dir")
    if cfg.true_model is not None:
        cfg.require("true_model")
    schedule = cfg.schedule()
    geometry = read_geometry(cfg.geometry)
    data = load_data_dir(cfg.data_dir)
    fmin = min(f for batch in expand_schedule(schedule) for f in batch)
    pad = _pad_for(cfg, cfg.model, fmin)
    model0 = load_model(cfg.model, pad, cfg.bounds, cfg.model_units)
    truth = load_model(cfg.true_model, pad, None, cfg.model_units) if cfg.true_model else None
    geometry.validate(model0.grid)
    for f, d in data.items():
        if d.values.shape != (geometry.nr, geometry.ns):
            raise ConfigError(f"data at {f} Hz has shape {d.values.shape}, geometry needs "
                              f"{(geometry.nr, geometry.ns)}")
    sketch = cfg.sketch()
    budget = predict_budget(schedule, geometry.ns, geometry.nr, sketch)
    out = Path(cfg.out)
    (out / "snapshots").mkdir(parents=True, exist_ok=True)
    try:
        started = time.time()
        result = run_inversion(model0, data, geometry, schedule, cfg.wri(), sketch=sketch, truth=truth,
                               on_batch=lambda ib, m: save_model(out / "snapshots" / f"batch_{ib:03d}.bin", m))
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from exc
    save_model(out / "model_final.bin", result.model)
    write_csv(out / "iterations.csv", IterationLog.CSV_HEADER + ("receiver_seed", "source_seed"),
              [e.csv_row() + [_blank(e.receiver_seed), _blank(e.source_seed)] for e in result.logs])
    manifest = {**_base_manifest(cfg, "invert"), "pad": pad,
                **_inputs_manifest(cfg, "model", "true_model", "geometry"),
                **{f"input.data.{f:g}Hz.sha256": _data_digest(cfg.data_dir, f) for f in sorted(data)},
                "batches": len(result.batches),
                "predicted_forward": budget.predicted_forward, "predicted_backward": budget.predicted_backward,
                "actual_forward": result.tally.forward, "actual_backward": result.tally.backward,
                "actual_total": result.tally.total, "elapsed_s": f"{time.time() - started:.1f}"}
    if truth is not None:
        manifest["initial_model_error"] = f"{model0.relative_error(truth):.8e}"
        manifest["final_model_error"] = f"{result.model.relative_error(truth):.8e}"
    write_manifest(out / "manifest.txt", manifest)
    return EXIT_OK


def _blank(v):
    return "" if v is None else v


def _data_digest(directory, f) -> str:
    p = Path(directory) / data_filename(f)
    return file_digest(p) if p.exists() else ""


def cmd_validate(cfg: RunConfig) -> int:
    try:
        results = default_battery(cfg.validate_n, cfg.validate_instances, cfg.eta, cfg.validate_tol, cfg.seed)
    except OracleCapError as exc:
        raise ConfigError(f"refusing to validate: {exc}") from exc
    for r in results:
        print(r.line())
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_VALIDATION


def cmd_budget(cfg: RunConfig) -> int:
    schedule = cfg.schedule()
    if cfg.geometry is not None:
        cfg.require("geometry")
        geometry = read_geometry(cfg.geometry)
        ns, nr = geometry.ns, geometry.nr
    elif cfg.ns is not None and cfg.nr is not None:
        ns, nr = cfg.ns, cfg.nr
    else:
        raise ConfigError("budget needs a geometry file or both 'ns' and 'nr'")
    budget = predict_budget(schedule, ns, nr, cfg.sketch())
    print(f"batches={len(expand_schedule(schedule))}")
    print(f"forward={budget.predicted_forward}")
    print(f"backward={budget.predicted_backward}")
    print(f"total={budget.predicted_total}")
    return EXIT_OK


def cmd_img(grid_path: Path, out_path: Path) -> int:
    values, _ = read_grid(grid_path)
    write_pgm(out_path, np.abs(values) if np.iscomplexobj(values) else values)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cbswri", description="CBS Helmholtz modelling and IR-WRI inversion.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("forward", "simulate data for every configured frequency"),
                            ("invert", "run the frequency-continuation inversion"),
                            ("validate", "run the oracle equivalence battery"),
                            ("budget", "print the predicted number of PDE solves")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, required=name != "validate")
        p.add_argument("--threads", type=int, help="FFT threads, 0 = all cores")
        p.add_argument("--seed", type=int, help="master seed for sketches and validation instances")
        p.add_argument("--out", type=Path, help="output directory")
    p = sub.add_parser("img", help="render a grid file as an 8-bit graymap")
    p.add_argument("grid", type=Path)
    p.add_argument("output", type=Path)
    return parser


COMMANDS = {"forward": cmd_forward, "invert": cmd_invert, "validate": cmd_validate, "budget": cmd_budget}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "img":
            return cmd_img(args.grid, args.output)
        cfg = load_config(args.config) if args.config else RunConfig()
        overrides = {k: getattr(args, k) for k in ("threads", "seed", "out") if getattr(args, k) is not None}
        cfg = replace(cfg, **overrides)
        if cfg.threads < 0:
            raise ConfigError("threads must be >= 0")
        return COMMANDS[args.command](cfg)
    except CbsDivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, FormatError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
