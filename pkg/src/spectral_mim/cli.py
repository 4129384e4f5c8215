"""Command-line runner: simulate, predict, design, threshold, oracle-check."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import finite_oracle, optimal_design, simulator, theory
from .config import Config, load_config
from .errors import ConfigError, DegenerateObjective, InvalidDimension, SpectralMIMError
from .expectation import build_zlaw, gauss_hermite_rule, monte_carlo_rule

log = logging.getLogger("spectral_mim")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_CHECK = 0, 2, 3, 4
CSV_HEADER = list(simulator.CSV_COLUMNS) + ["config_hash"]


@dataclass
class RunManifest:
    config_path: str | None
    config_hash: str | None
    out_dir: str
    command: str
    params: dict = field(default_factory=dict)
    outputs: list[str] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def write(self) -> None:
        path = Path(self.out_dir) / f"manifest_{self.command}.json"
        path.write_text(json.dumps(self.__dict__, indent=2, default=_json_default) + "\n")


def _json_default(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return str(x)


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_csv(path: Path, rows: list[dict], config_hash: str, header=CSV_HEADER) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r.get(c, config_hash if c == "config_hash" else "")) for c in header])


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _zlaw(cfg: Config, preproc):
    q = cfg.quadrature or {}
    kind = q.get("kind", "y_resolved")
    nodes = q.get("nodes")
    if kind == "y_resolved":
        return build_zlaw(cfg.model, cfg.signals, preproc, nodes_per_panel=int(nodes or 20))
    if kind == "gauss_hermite":
        return build_zlaw(cfg.model, cfg.signals, preproc, rule=gauss_hermite_rule(cfg.model.p, int(nodes or 61)))
    if kind == "monte_carlo":
        rule = monte_carlo_rule(cfg.model.p, int(q.get("samples", 1_000_000)), int(q.get("seed", cfg.seed)))
        return build_zlaw(cfg.model, cfg.signals, preproc, rule=rule)
    raise ConfigError(f"quadrature: unknown kind {kind!r}")


# ---------------------------------------------------------------- subcommands


def cmd_simulate(cfg: Config, out: Path, threads: int = 1) -> dict:
    rows = []
    for pre in cfg.preprocessings:
        base = simulator.ExperimentConfig(n=cfg.d, d=cfg.d, model=cfg.model, signals=cfg.signals, preproc=pre,
                                          trials=cfg.trials, seed=cfg.seed, eigensolver=cfg.eigensolver,
                                          dense_cutoff=cfg.dense_cutoff, random_frame=cfg.random_frame,
                                          threads=threads)
        for res in simulator.sweep(base, cfg.deltas):
            rows.extend(res.rows)
            log.info("simulated %s at delta=%g", pre.name, res.config.delta)
    path = out / f"{cfg.name}_simulate.csv"
    write_csv(path, rows, cfg.hash)
    return {"outputs": [str(path)], "rows": len(rows)}


def theory_rows(pred: theory.TheoryPrediction, cfg: Config, pre, d: int) -> list[dict]:
    n = int(round(pred.delta * d))
    base = {"delta": pred.delta, "n": n, "d": d, "preproc": pre.name, "std": 0.0, "trials": 0, "seed": cfg.seed}
    rows = []

    stats = {
        "eigenvalue": pred.eigenvalues[:, None],
        "overlap_signal": np.sqrt(pred.overlap_signal),
        "overlap_signal_sq": pred.overlap_signal,
        "overlap_basis": np.sqrt(pred.overlap_basis),
        "overlap_basis_sq": pred.overlap_basis,
        "subspace_score": np.array([[pred.subspace_score]]),
    }
    for name, mat in stats.items():
        for i in range(mat.shape[0]):
            for j in range(mat.shape[1]):
                rows.append(dict(base, stat_name=name, i=i + 1, j=j + 1, mean=float(mat[i, j])))
    return rows


def cmd_predict(cfg: Config, out: Path) -> dict:
    rows, details = [], []
    for pre in cfg.preprocessings:
        zlaw = _zlaw(cfg, pre)
        for delta in cfg.deltas:
            pred = theory.predict_at(zlaw, cfg.signals, delta)
            rows.extend(theory_rows(pred, cfg, pre, cfg.d))
            details.append({"preproc": pre.name, **pred.to_dict()})
    csv_path = out / f"{cfg.name}_predict.csv"
    json_path = out / f"{cfg.name}_predict.json"
    write_csv(csv_path, rows, cfg.hash)
    write_json(json_path, {"config_hash": cfg.hash, "predictions": details})
    return {"outputs": [str(csv_path), str(json_path)], "rows": len(rows)}


def _y_grid(cfg: Config) -> np.ndarray:
    grid = cfg.design.get("y_grid")
    sup = cfg.model.y_support
    if grid:
        lo, hi, num = grid
    else:
        lo, hi, num = max(sup.lower, -10.0), min(sup.upper, 10.0), 400
    if sup.is_discrete:
        return np.asarray(sup.atoms, dtype=float)
    return np.linspace(lo, hi, int(num))


def cmd_design(cfg: Config, out: Path) -> dict:
    json_path = out / f"{cfg.name}_design.json"
    csv_path = out / f"{cfg.name}_design_T.csv"
    report = {"config_hash": cfg.hash, "model": cfg.model.name}
    try:
        res = optimal_design.design(cfg.model, cfg.signals)
    except DegenerateObjective as exc:
        report.update({"status": "degenerate", "delta_c": float("inf"), "message": str(exc)})
        write_json(json_path, report)
        return {"outputs": [str(json_path)], "delta_c": float("inf")}
    report.update({"status": "ok", **res.to_dict()})
    grid = _y_grid(cfg)
    rows = []
    maps = [("T_star", res.T_star)] + [(p.name, p) for p in cfg.preprocessings]
    for label, fn in maps:
        vals = fn(grid)
        rows.extend({"y": float(y), "map": label, "value": float(v)} for y, v in zip(grid, vals))
    write_json(json_path, report)
    write_csv(csv_path, rows, cfg.hash, header=["y", "map", "value", "config_hash"])
    return {"outputs": [str(json_path), str(csv_path)], "delta_c": res.delta_c}


def cmd_threshold(cfg: Config, out: Path) -> dict:
    branches = cfg.threshold.get("branches", [1])
    lo, hi = cfg.threshold.get("delta_range", [0.05, 100.0])
    results, failed = [], 0
    for pre in cfg.preprocessings:
        zlaw = _zlaw(cfg, pre)
        for b in branches:
            entry = {"preproc": pre.name, "branch": b}
            try:
                entry["delta_c"] = theory.recovery_threshold(cfg.model, cfg.signals, pre, b - 1, (lo, hi), zlaw=zlaw)
            except SpectralMIMError as exc:
                entry.update({"delta_c": None, "error": f"{type(exc).__name__}: {exc}"})
                failed += 1
            results.append(entry)
            print(f"{pre.name:40s} branch {b}: {entry['delta_c']}")
    path = out / f"{cfg.name}_threshold.json"
    write_json(path, {"config_hash": cfg.hash, "delta_range": [lo, hi], "thresholds": results})
    return {"outputs": [str(path)], "failed": failed}


def cmd_oracle_check(opts: dict, seed: int, out: Path) -> dict:
    reports = finite_oracle.run_suite(instances=int(opts.get("instances", 100)), seed=seed,
                                      n_max=int(opts.get("n_max", 60)), d_max=int(opts.get("d_max", 20)),
                                      p_max=int(opts.get("p_max", 3)))
    lines = [f"{'#':>4} {'n':>4} {'d':>4} {'p':>2} {'preproc':<18} {'out':>3} {'eig_err':>10} {'vec_err':>10} status"]
    for r in reports:
        ee = max(r.eig_errors, default=0.0)
        ve = max(r.vec_errors, default=0.0)
        lines.append(f"{r.index:4d} {r.n:4d} {r.d:4d} {r.p:2d} {r.preproc:<18} {r.outlier_branches:3d} "
                     f"{ee:10.2e} {ve:10.2e} {'PASS' if r.passed else 'FAIL ' + (r.error or '')}")
    n_fail = sum(not r.passed for r in reports)
    lines.append(f"{len(reports) - n_fail}/{len(reports)} instances passed")
    table = "\n".join(lines)
    print(table)
    path = out / "oracle_check.txt"
    path.write_text(table + "\n")
    return {"outputs": [str(path)], "failed": n_fail}


# ---------------------------------------------------------------- entry point


def _configure_logging() -> None:
    level = os.environ.get("SPECTRAL_MIM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--out", default="results", help="output directory")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--threads", type=int, default=1, help="parallel trials")
    common.add_argument("--quad-nodes", type=int, help="quadrature nodes (per y-panel or per axis)")
    parser = argparse.ArgumentParser(prog="spectral-mim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "predict", "design", "threshold", "oracle-check"):
        sub.add_parser(name, parents=[common])
    return parser


def _load(args) -> Config:
    if not args.config:
        raise ConfigError("--config is required for this command")
    cfg = load_config(args.config, overrides={"seed": args.seed})
    if args.quad_nodes is not None:
        cfg.quadrature = dict(cfg.quadrature, nodes=args.quad_nodes)
        cfg.raw["quadrature"] = cfg.quadrature
    return cfg


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    cfg = None
    try:
        if args.command == "oracle-check":
            opts, seed = {}, args.seed or 0
            if args.config:
                cfg = _load(args)
                opts, seed = cfg.oracle, cfg.seed
            info = cmd_oracle_check(opts, seed, out)
            code = EXIT_CHECK if info["failed"] else EXIT_OK
        else:
            cfg = _load(args)
            if args.command == "simulate":
                info = cmd_simulate(cfg, out, threads=args.threads)
            elif args.command == "predict":
                info = cmd_predict(cfg, out)
            elif args.command == "design":
                info = cmd_design(cfg, out)
            else:
                info = cmd_threshold(cfg, out)
            code = EXIT_SOLVER if info.get("failed") else EXIT_OK
    except (ConfigError, InvalidDimension) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SpectralMIMError as exc:
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    RunManifest(config_path=args.config, config_hash=cfg.hash if cfg else None, out_dir=str(out),
                command=args.command, params={"seed": args.seed, "threads": args.threads,
                                              "quad_nodes": args.quad_nodes},
                outputs=info.get("outputs", []),
                diagnostics={"seconds": round(time.perf_counter() - start, 3)}).write()
    for p in info.get("outputs", []):
        print(p)
    return code


if __name__ == "__main__":
    sys.exit(main())
