"""Command-line entry point.

Every subcommand takes one JSON config (``--config``), writes its outputs and
an echo of the resolved config into ``--out``, and exits with

    0  success / converged
    1  finished but not converged (or gradient check failed)
    2  invalid config or input file
    3  runtime failure (divergence, numerical domain error)
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from . import FORMAT_VERSION, __version__
from .bench import (PlatformSample, RooflineSpec, dominance_matrix, load_roofline_fixtures,
                    load_table, measure_recovery, pareto_front, perf_per_watt, ratio_report,
                    read_samples_csv, roofline_curve, write_samples_csv)
from .config import load_config
from .dynamics import (BERGMAN, ECGSYN, ECGSYN_DEFAULT_THETA, InputSignal, bergman_fixture,
                       bergman_inputs, build_library, ecgsyn_inputs, get_model, simulate)
from .errors import DivergenceError, DtlearnError, StructuralError
from .gradcheck import run_gradcheck
from .hlscost import feasibility_table, min_feasible_ii
from .recovery import as_model, check_identifiability, recover_many
from .signal import (NoiseSpec, TrajectoryFormatError, corrupt, mask_hidden, read_trajectory_csv,
                     write_trajectory_csv)

log = logging.getLogger("dtlearn")

EXIT_OK, EXIT_NOT_CONVERGED, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(ValueError):
    """Bad arguments or input files (exit 2)."""


def _write_json(path, doc):
    doc = {"format_version": FORMAT_VERSION} | doc
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _echo_config(out, command, cfg):
    _write_json(out / "config.json", {"command": command, "config": cfg.model_dump(mode="json")})


def _theta_vector(model, theta):
    if theta is None:
        return None
    if isinstance(theta, dict):
        missing = set(model.theta_names) - set(theta)
        if missing:
            raise UsageError(f"theta is missing {sorted(missing)}")
        return np.array([theta[k] for k in model.theta_names], dtype=float)
    if len(theta) != model.p:
        raise UsageError(f"theta needs {model.p} values for model {model.name}")
    return np.asarray(theta, dtype=float)


# --------------------------------------------------------------------------
# simulate


def cmd_simulate(cfg, out: Path) -> int:
    if cfg.model == "bergman":
        fx = bergman_fixture()
        model = BERGMAN
        theta = _theta_vector(model, cfg.theta)
        theta = fx["theta"].values if theta is None else theta
        inputs = bergman_inputs(cfg.inputs) if cfg.inputs else fx["inputs"]
        x0 = fx["x0"] if cfg.x0 is None else cfg.x0
        T = cfg.T or fx["T"]
        N = cfg.N or fx["N"]
    else:
        model = ECGSYN
        theta = _theta_vector(model, cfg.theta)
        theta = ECGSYN_DEFAULT_THETA if theta is None else theta
        inputs = ecgsyn_inputs(**(cfg.inputs or {}))
        x0 = [1.0, 0.0, 0.03] if cfg.x0 is None else cfg.x0
        T = cfg.T or 10.0
        N = cfg.N or 1000
    traj = simulate(model, theta, inputs, x0, T, N, substeps=cfg.substeps)
    if cfg.observed is not None:
        traj = mask_hidden(traj, cfg.observed)
    if cfg.noise is not None:
        seed = cfg.seed if cfg.noise.seed is None else cfg.noise.seed
        traj = corrupt(traj, NoiseSpec(snr_db=cfg.noise.snr_db, sigma=cfg.noise.sigma, seed=seed))
    write_trajectory_csv(traj, out / "trajectory.csv")
    _write_json(out / "metadata.json", {
        "model": model.name, "time_unit": model.time_unit, "theta": dict(zip(model.theta_names,
                                                                          map(float, theta))),
        "x0": [float(v) for v in x0], "T": T, "N": N, "substeps": cfg.substeps,
        "mask": [bool(b) for b in traj.mask], "seed": cfg.seed})
    log.info("wrote %d samples to %s", N, out / "trajectory.csv")
    return EXIT_OK


# --------------------------------------------------------------------------
# recover


def _load_trajectories(paths):
    paths = [paths] if isinstance(paths, str) else list(paths)
    out = []
    for p in paths:
        if not Path(p).exists():
            raise UsageError(f"trajectory file not found: {p}")
        out.append(read_trajectory_csv(p))
    return out


def _recovery_model(cfg, traj):
    if cfg.model != "library":
        return get_model(cfg.model)
    lib = cfg.library
    if traj.n_states != lib.n or traj.n_inputs != lib.m:
        raise UsageError(f"trajectory has {traj.n_states} states/{traj.n_inputs} inputs, "
                         f"library expects {lib.n}/{lib.m}")
    names = tuple(lib.state_names) or tuple(traj.state_names)
    return as_model(build_library(lib.n, lib.m, lib.order,
                                  variable_names=names + tuple(traj.input_names)))


def _run_recover(cfg, trajs):
    model = _recovery_model(cfg, trajs[0])
    config = cfg.recovery.build(cfg.seed)
    return model, recover_many(trajs, model, config, workers=cfg.workers)


def _write_report(out, report, suffix=""):
    _write_json(out / f"report{suffix}.json", report.to_json())
    (out / f"loss_history{suffix}.csv").write_text(report.loss_history_csv())
    (out / f"theta{suffix}.json").write_text(report.theta_json() + "\n")


def _identifiability(cfg, model, traj, report):
    sec = cfg.identifiability
    theta = report.theta_recovered.values
    inputs = InputSignal(model.input_names,
                         [(traj.times - traj.times[0], traj.inputs[:, j]) for j in range(model.m)])
    horizon = sec.horizon or float(traj.times[-1] - traj.times[0])
    delta = np.maximum(sec.relative_delta * np.abs(theta), 1e-8)
    flags = check_identifiability(model, theta, inputs, report.z0, horizon, delta, sec.tolerance,
                                  observed=traj.mask, N=traj.n_samples)
    return {name: bool(f) for name, f in zip(report.theta_recovered.names
                                             or map(str, report.theta_recovered.term_ids), flags)}


def cmd_recover(cfg, out: Path) -> int:
    trajs = _load_trajectories(cfg.trajectory)
    try:
        model, reports = _run_recover(cfg, trajs)
    except DivergenceError as exc:
        if getattr(exc, "report", None) is not None:
            _write_report(out, exc.report)
        raise
    for i, report in enumerate(reports):
        suffix = "" if len(reports) == 1 else f"_{i}"
        _write_report(out, report, suffix)
        if cfg.identifiability is not None:
            _write_json(out / f"identifiability{suffix}.json",
                        {"identifiable": _identifiability(cfg, model, trajs[i], report)})
        log.info("series %d: rmse %.4g converged=%s theta=%s", i, report.reconstruction_error,
                 report.converged, report.theta_recovered.as_dict())
    return EXIT_OK if all(r.converged for r in reports) else EXIT_NOT_CONVERGED


# --------------------------------------------------------------------------
# bench / roofline / pareto


def _reference_samples(ref):
    if ref in ("aid", "cardiac"):
        return load_table(ref)
    if not Path(ref).exists():
        raise UsageError(f"reference table not found: {ref}")
    return read_samples_csv(ref)


def _ratio_json(rows):
    return [dict(r.__dict__) for r in rows]


def _pareto_json(samples, objectives):
    front = pareto_front(samples, objectives)
    dom = dominance_matrix(samples, objectives)
    return {"objectives": list(objectives), "front": [s.label for s in front],
            "labels": [s.label for s in samples], "dominance": dom.astype(int).tolist()}


def _write_roofline(cfg, out):
    if cfg.platforms is None:
        specs = load_roofline_fixtures()
    else:
        specs = {k: RooflineSpec(v.peak_gflops, v.bandwidth_gbs, k) for k, v in cfg.platforms.items()}
    summary = {}
    for name, spec in specs.items():
        curve = roofline_curve(spec, cfg.oi_min, cfg.oi_max, cfg.points)
        lines = ["oi,attainable_gflops"] + [f"{a!r},{b!r}" for a, b in curve.tolist()]
        (out / f"roofline_{name}.csv").write_text("\n".join(lines) + "\n")
        summary[name] = {"peak_gflops": spec.peak_gflops, "bandwidth_gbs": spec.bandwidth_gbs,
                         "ridge_oi": spec.ridge}
    _write_json(out / "roofline.json", {"platforms": summary})


def cmd_roofline(cfg, out: Path) -> int:
    if cfg.oi_max <= cfg.oi_min:
        raise UsageError("oi_max must exceed oi_min")
    _write_roofline(cfg, out)
    return EXIT_OK


def cmd_pareto(cfg, out: Path) -> int:
    samples = _reference_samples(cfg.table)
    _write_json(out / "pareto.json", _pareto_json(samples, cfg.objectives))
    return EXIT_OK


def cmd_bench(cfg, out: Path) -> int:
    reference = _reference_samples(cfg.reference_table) if cfg.reference_table else []
    trajs = _load_trajectories(cfg.recover.trajectory)
    m = measure_recovery(lambda: _run_recover(cfg.recover, trajs))
    _, reports = m.result
    for i, report in enumerate(reports):
        _write_report(out, report, "" if len(reports) == 1 else f"_{i}")
    error = float(np.mean([r.reconstruction_error for r in reports]))
    sample = PlatformSample(label=cfg.label, runtime_s=m.runtime_s,
                            dram_mb=m.peak_memory_bytes / 2 ** 20, error=error,
                            avg_power_w=cfg.avg_power_w)
    results = Path(cfg.results_csv) if cfg.results_csv else out / "results.csv"
    write_samples_csv([sample], results, append=True)
    doc = {"sample": sample.to_dict(), "perf_per_watt": perf_per_watt(sample),
           "perf_per_watt_convention": "runtime_s / avg_power_w (s/W)",
           "dram_note": "peak resident set size of the process, sampled during the run"}
    rows = reference + [sample]
    if cfg.baseline:
        doc["ratios"] = _ratio_json(ratio_report(rows, cfg.baseline))
    if cfg.objectives:
        doc["pareto"] = _pareto_json(rows, cfg.objectives)
    _write_json(out / "bench.json", doc)
    if cfg.roofline is not None:
        _write_roofline(cfg.roofline, out)
    return EXIT_OK if all(r.converged for r in reports) else EXIT_NOT_CONVERGED


# --------------------------------------------------------------------------
# gradcheck / hlscost


def cmd_gradcheck(cfg, out: Path) -> int:
    summary = run_gradcheck(cfg.hidden_dim, cfg.n, cfg.m, cfg.N,
                            seeds=tuple(range(cfg.seed, cfg.seed + cfg.seeds)),
                            coordinates=cfg.coordinates, tolerance=cfg.tolerance,
                            corrupt=cfg.corrupt_gradient)
    _write_json(out / "gradcheck.json", {
        "passed": summary.passed, "max_rel_error": summary.max_rel_error,
        "tolerance": summary.tolerance, "results": [r.to_json() for r in summary.results]})
    print(f"gradcheck {'PASS' if summary.passed else 'FAIL'} "
          f"max rel error {summary.max_rel_error:.3e} (tolerance {summary.tolerance:g})")
    return EXIT_OK if summary.passed else EXIT_NOT_CONVERGED


def cmd_hlscost(cfg, out: Path) -> int:
    rows = feasibility_table(cfg.loop, cfg.partition, cfg.clock_mhz, cfg.max_ii)
    floor = min_feasible_ii(cfg.loop, cfg.partition)
    _write_json(out / "hlscost.json", {"min_feasible_ii": floor, "clock_mhz": cfg.clock_mhz,
                                       "rows": rows})
    print(f"{'II':>3} {'feasible':>8} {'latency':>10} {'iter/s':>12}  violations")
    for r in rows:
        lat = "-" if r["latency_cycles"] is None else str(r["latency_cycles"])
        print(f"{r['ii']:>3} {str(r['feasible']):>8} {lat:>10} "
              f"{r['throughput_iter_per_s']:>12.4g}  {'; '.join(r['violations'])}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "recover": cmd_recover,
    "bench": cmd_bench,
    "roofline": cmd_roofline,
    "pareto": cmd_pareto,
    "gradcheck": cmd_gradcheck,
    "hlscost": cmd_hlscost,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="dtlearn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file (defaults are used if omitted)")
        p.add_argument("--out", default="dtlearn-out", help="output directory")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--verbose", "-v", action="store_true")
    return parser


def _read_config(path):
    if path is None:
        return None
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from None
    if not text.strip():
        raise UsageError(f"{path}: empty config file")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        doc = _read_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise UsageError("--seed must be non-negative")
            doc = (doc or {}) | {"seed": args.seed}
        cfg = load_config(args.command, doc)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _echo_config(out, args.command, cfg)
        return COMMANDS[args.command](cfg, out)
    except ValidationError as exc:
        print(f"config error:\n{exc}", file=sys.stderr)
        return EXIT_INVALID
    except (UsageError, TrajectoryFormatError, StructuralError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (DtlearnError, ArithmeticError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
