"""Command-line front end: generate problems, certificates, runs, sweeps.

Exit codes: 0 success (inadmissible certificates and diverged runs are
results, not failures), 2 usage or config errors, 3 ensemble generation
failure, 4 sketch/problem shape mismatch.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, certificates, quadratics, runner
from .errors import ConfigInvalid, DegenerateEnsemble, IncompatibleShape, IstLabError
from .estimators import EstimatorKind
from .quadratics import QuadraticProblem
from .runner import RunConfig, StepSchedule
from .sketches import SketchKind

MODES = ("het", "hom", "het-interp", "hom-interp")

EXPERIMENT_KEYS = {
    "problem", "estimator", "sketch", "schedule", "K", "seed",
    "repeats", "metrics", "output",
}
GENERATOR_KEYS = {"mode", "n", "d", "seed", "precondition"}


def counterexample_fixture_path() -> Path:
    """Path of the shipped 2-d indefinite-descent-matrix fixture."""
    return Path(__file__).parent / "data" / "indefinite_2d.json"


# ---------------------------------------------------------------------------
# problem sources
# ---------------------------------------------------------------------------


def generate_problem(mode: str, n: int, d: int, seed: int, precond: bool = False):
    if mode not in MODES:
        raise ConfigInvalid(f"mode must be one of {MODES}")
    base = mode.split("-")[0]
    p = quadratics.gen_heterogeneous(n, d, seed) if base == "het" else quadratics.gen_homogeneous(n, d, seed)
    if precond:
        p, _ = quadratics.precondition_homogeneous(p)
    if mode.endswith("interp"):
        p = p.as_interpolation()
    return p


def _load_problem_source(source) -> tuple[QuadraticProblem, dict]:
    """Resolve the experiment file's "problem" entry; returns (problem, provenance)."""
    if isinstance(source, str):
        path = Path(source)
        p = QuadraticProblem.load(path)
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        return p, {"path": str(path), "sha256": digest}
    if isinstance(source, dict) and "generator" in source:
        spec = dict(source["generator"])
        extra = set(spec) - GENERATOR_KEYS
        if extra:
            raise ConfigInvalid(f"unknown generator keys {sorted(extra)}")
        p = generate_problem(
            spec["mode"], int(spec["n"]), int(spec["d"]), int(spec["seed"]),
            bool(spec.get("precondition", False)),
        )
        return p, {"generator": spec}
    raise ConfigInvalid("problem must be a path string or {'generator': {...}}")


# ---------------------------------------------------------------------------
# experiment files
# ---------------------------------------------------------------------------


def parse_experiment(doc: dict) -> tuple[RunConfig, dict, dict]:
    """Validate an experiment document; returns (config, output spec, provenance)."""
    extra = set(doc) - EXPERIMENT_KEYS
    if extra:
        raise ConfigInvalid(f"unknown experiment keys {sorted(extra)}")
    for key in ("problem", "estimator", "schedule", "K", "seed", "output"):
        if key not in doc:
            raise ConfigInvalid(f"experiment file missing key {key!r}")
    problem, provenance = _load_problem_source(doc["problem"])
    try:
        est = EstimatorKind.from_config(doc["estimator"], doc.get("sketch"))
    except IncompatibleShape as exc:
        # malformed estimator/sketch spec is a config error, not a runtime
        # shape mismatch
        raise ConfigInvalid(str(exc)) from exc
    schedule = StepSchedule.from_config(doc["schedule"])
    metrics = tuple(doc.get("metrics", ["f_gap_rel_log"]))
    output = doc["output"]
    if not isinstance(output, dict) or set(output) != {"format", "path"}:
        raise ConfigInvalid("output must be {'format': 'csv'|'json', 'path': ...}")
    if output["format"] not in ("csv", "json"):
        raise ConfigInvalid("output format must be 'csv' or 'json'")
    cfg = RunConfig(
        problem=problem,
        estimator=est,
        schedule=schedule,
        K=int(doc["K"]),
        seed=int(doc["seed"]),
        repeats=int(doc.get("repeats", 1)),
        metrics=metrics,
    )
    return cfg, output, provenance


def resolved_config_doc(cfg: RunConfig, output: dict, provenance: dict) -> dict:
    return {
        "problem": provenance,
        "estimator": cfg.estimator.kind,
        "sketch": cfg.estimator.sketch.to_config() if cfg.estimator.sketch else None,
        "schedule": cfg.schedule.to_config(),
        "K": cfg.K,
        "seed": cfg.seed,
        "repeats": cfg.repeats,
        "x0": "gaussian(seed)",
        "metrics": list(cfg.metrics),
        "output": output,
    }


# ---------------------------------------------------------------------------
# trace files
# ---------------------------------------------------------------------------


def write_trace_csv(trace: runner.Trace, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["repeat", "k", "metric_name", "value"])
        for row in trace.rows():
            writer.writerow([row[0], row[1], row[2], repr(row[3])])


def read_trace_csv(path: Path) -> list[tuple[int, int, str, float]]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["repeat", "k", "metric_name", "value"]:
            raise ConfigInvalid(f"unexpected trace header {header}")
        for rec in reader:
            rows.append((int(rec[0]), int(rec[1]), rec[2], float(rec[3])))
    return rows


def trace_json_doc(trace: runner.Trace) -> dict:
    def clean(arr):
        return [[None if np.isnan(v) else v for v in row] for row in arr]

    return {
        "metrics": {name: clean(trace.metrics[name]) for name in trace.metric_order},
        "final_f": trace.final_f.tolist(),
        "diverged_at": trace.diverged_at.tolist(),
        "gammas": trace.gammas.tolist(),
        "x0": trace.x0.tolist(),
    }


def read_trace_json(path: Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def write_outputs(trace: runner.Trace, output: dict, meta: dict) -> None:
    path = Path(output["path"])
    if output["format"] == "csv":
        write_trace_csv(trace, path)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(trace_json_doc(trace), fh)
            fh.write("\n")
    meta_path = path.with_name(path.name + ".meta.json")
    doc = dict(meta)
    doc["artifact"] = {"name": "istlab", "version": __version__}
    doc["diverged_at"] = trace.diverged_at.tolist()
    with open(meta_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    p = generate_problem(args.mode, args.n, args.d, args.seed)
    p.save(args.out)
    vals = np.linalg.eigvalsh((p.L_bar + p.L_bar.T) / 2.0)
    print(f"lambda_min(L_bar) = {vals[0]:.12g}")
    print(f"lambda_max(L_bar) = {vals[-1]:.12g}")
    return 0


def _sketch_from_args(args) -> SketchKind:
    doc = {"kind": args.sketch}
    if args.q is not None:
        doc["q"] = args.q
    if args.p is not None:
        doc["p"] = args.p
    try:
        return SketchKind.from_config(doc)
    except IncompatibleShape as exc:
        raise ConfigInvalid(str(exc)) from exc


def cmd_theory(args) -> int:
    p = QuadraticProblem.load(args.problem)
    kind = _sketch_from_args(args)
    cert = certificates.certificate(
        p, kind, gamma=args.gamma, sigma2_samples=args.sigma2_samples,
        rng=np.random.default_rng(0) if args.sigma2_samples else None,
    )
    doc = {
        "theta": cert.theta if cert.theta is not None else "inadmissible",
        "rho": cert.rho,
        "h_norm_L": cert.bias_norm,
        "x_inf": cert.x_inf.tolist() if cert.x_inf is not None else None,
        "sigma2": cert.sigma2,
        "W_psd": cert.descent_psd,
    }
    print(json.dumps(doc))
    return 0


def _load_experiment(path) -> tuple[RunConfig, dict, dict]:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(f"experiment file is not valid JSON: {exc}") from exc
    return parse_experiment(doc)


def cmd_run(args) -> int:
    cfg, output, provenance = _load_experiment(args.config)
    trace = runner.run(cfg)
    write_outputs(trace, output, {"resolved_config": resolved_config_doc(cfg, output, provenance)})
    n_div = int((trace.diverged_at >= 0).sum())
    if n_div:
        print(f"diverged repeats: {n_div} (recorded in meta sidecar)")
    print(f"wrote {output['path']}")
    return 0


def cmd_sweep(args) -> int:
    cfg, output, provenance = _load_experiment(args.config)
    gammas = [float(tok) for tok in args.gammas.split(",") if tok]
    if not gammas:
        raise ConfigInvalid("sweep requires a nonempty --gammas list")
    traces = runner.sweep(cfg, gammas)
    base = Path(output["path"])
    for g, trace in zip(gammas, traces):
        out_g = dict(output)
        out_g["path"] = str(base.with_name(f"{base.stem}_gamma{g:g}{base.suffix}"))
        cfg_g = resolved_config_doc(cfg, out_g, provenance)
        cfg_g["schedule"] = cfg.schedule.with_gamma(g).to_config()
        write_outputs(trace, out_g, {"resolved_config": cfg_g})
        print(f"wrote {out_g['path']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="istlab", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a problem file")
    gen.add_argument("--n", type=int, required=True)
    gen.add_argument("--d", type=int, required=True)
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--mode", choices=MODES, required=True)
    gen.add_argument("--out", required=True)
    gen.set_defaults(fn=cmd_gen)

    theory = sub.add_parser("theory", help="emit a convergence certificate as JSON")
    theory.add_argument("--problem", required=True)
    theory.add_argument("--sketch", required=True)
    theory.add_argument("--q", type=int, default=None)
    theory.add_argument("--p", type=float, default=None)
    theory.add_argument("--gamma", type=float, default=None)
    theory.add_argument("--sigma2-samples", type=int, default=None)
    theory.set_defaults(fn=cmd_theory)

    run_p = sub.add_parser("run", help="execute an experiment file")
    run_p.add_argument("--config", required=True)
    run_p.set_defaults(fn=cmd_run)

    sweep_p = sub.add_parser("sweep", help="run an experiment at several step sizes")
    sweep_p.add_argument("--config", required=True)
    sweep_p.add_argument("--gammas", required=True, help="comma-separated step sizes")
    sweep_p.set_defaults(fn=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except DegenerateEnsemble as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except IncompatibleShape as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (ConfigInvalid, IstLabError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
