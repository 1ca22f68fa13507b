"""Execute the sketched iteration and record per-iteration metrics.

The update is x^{k+1} = x^k - gamma_k * g^k with a fresh joint sketch per
round.  A run executes ``repeats`` independent trajectories that share the
problem and the initial point; repeat ``r`` draws its sketches from the
substream ``SeedSequence(seed, spawn_key=(r,))``, so a trace is bitwise
reproducible for a fixed config regardless of thread count or scheduling.

Metrics (recorded at every iterate x^0 .. x^K):

f_gap_rel_log
    log10((f(x^k) - f*) / (f(x^0) - f*)), clamped at 1e-300 before the log
    so exact convergence stays finite.
grad_sq, grad_sq_Linv
    ||grad f(x^k)||^2 and its L_bar^{-1}-weighted version.
dist_L_to_xstar
    ||x^k - x*||^2_{L_bar}.
dist_to_xinf
    ||x^k - x_inf|| (needs a sketch family with a closed-form fixed point).
submodel_loss_avg
    (1/n) sum_i f_i(C_i x^k) under the round's sketch; the final iterate
    draws one extra sketch solely for this metric.

A trajectory whose metric magnitude exceeds 1e100 (or whose iterate leaves
the float range) is marked diverged at that iteration; its remaining rows
are NaN and the run still returns normally.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import NDArray

from . import certificates, estimators, linalg
from .errors import ConfigInvalid
from .estimators import EstimatorKind
from .quadratics import QuadraticProblem

METRICS = (
    "f_gap_rel_log",
    "grad_sq",
    "grad_sq_Linv",
    "dist_L_to_xstar",
    "dist_to_xinf",
    "submodel_loss_avg",
)

DIVERGENCE_LIMIT = 1e100


@dataclass(frozen=True)
class StepSchedule:
    """Constant step size, or a staircase divided periodically."""

    variant: str  # "constant" | "staircase"
    gamma: float
    divide_by: float | None = None
    period: int | None = None

    def __post_init__(self) -> None:
        if self.variant not in ("constant", "staircase"):
            raise ConfigInvalid(f"unknown schedule variant {self.variant!r}")
        if self.gamma <= 0.0:
            raise ConfigInvalid("step size must be positive")
        if self.variant == "staircase":
            if self.divide_by is None or self.divide_by <= 1.0:
                raise ConfigInvalid("staircase divide_by must be > 1")
            if self.period is None or self.period < 1:
                raise ConfigInvalid("staircase period must be >= 1")

    @classmethod
    def constant(cls, gamma: float) -> "StepSchedule":
        return cls("constant", gamma)

    @classmethod
    def staircase(cls, gamma0: float, divide_by: float = 10.0, period: int = 1000) -> "StepSchedule":
        return cls("staircase", gamma0, divide_by, period)

    def gamma_at(self, k: int) -> float:
        if self.variant == "constant":
            return self.gamma
        return self.gamma / self.divide_by ** (k // self.period)

    def with_gamma(self, gamma: float) -> "StepSchedule":
        return replace(self, gamma=gamma)

    @classmethod
    def from_config(cls, doc: dict) -> "StepSchedule":
        if doc.get("type") == "constant":
            extra = set(doc) - {"type", "gamma"}
            if extra:
                raise ConfigInvalid(f"unknown schedule keys {sorted(extra)}")
            return cls.constant(doc["gamma"])
        if doc.get("type") == "staircase":
            extra = set(doc) - {"type", "gamma0", "divide_by", "period"}
            if extra:
                raise ConfigInvalid(f"unknown schedule keys {sorted(extra)}")
            return cls.staircase(doc["gamma0"], doc.get("divide_by", 10.0), doc.get("period", 1000))
        raise ConfigInvalid("schedule type must be 'constant' or 'staircase'")

    def to_config(self) -> dict:
        if self.variant == "constant":
            return {"type": "constant", "gamma": self.gamma}
        return {
            "type": "staircase",
            "gamma0": self.gamma,
            "divide_by": self.divide_by,
            "period": self.period,
        }


@dataclass(frozen=True)
class RunConfig:
    problem: QuadraticProblem
    estimator: EstimatorKind
    schedule: StepSchedule
    K: int
    seed: int
    repeats: int = 1
    x0_policy: object = "gaussian"  # "gaussian" | ("gaussian", seed) | "zeros" | vector
    metrics: tuple[str, ...] = ("f_gap_rel_log",)
    record_iterates: bool = False

    def __post_init__(self) -> None:
        if self.K < 0:
            raise ConfigInvalid("K must be >= 0")
        if self.repeats < 1:
            raise ConfigInvalid("repeats must be >= 1")
        unknown = set(self.metrics) - set(METRICS)
        if unknown:
            raise ConfigInvalid(f"unknown metrics {sorted(unknown)}")


@dataclass
class Trace:
    """Per-iteration metric records with cross-repeat aggregates."""

    metrics: dict[str, NDArray]  # each (repeats, K+1), NaN after divergence
    final_f: NDArray  # (repeats,) realized f at the last recorded iterate
    diverged_at: NDArray  # (repeats,) iteration index, -1 if none
    gammas: NDArray  # (K,) realized step sizes
    x0: NDArray
    iterates: NDArray | None = None  # (repeats, K+1, d) when recorded
    metric_order: tuple[str, ...] = field(default_factory=tuple)

    @property
    def repeats(self) -> int:
        return self.final_f.shape[0]

    def mean(self, metric: str) -> NDArray:
        return np.nanmean(self.metrics[metric], axis=0)

    def std(self, metric: str) -> NDArray:
        return np.nanstd(self.metrics[metric], axis=0)

    def rows(self):
        """Yield (repeat, k, metric_name, value) in long format, stopping
        each repeat at its divergence point."""
        n_rows = self.metrics[self.metric_order[0]].shape[1] if self.metric_order else 0
        for r in range(self.repeats):
            stop = self.diverged_at[r]
            last = n_rows if stop < 0 else int(stop)
            for k in range(last):
                for name in self.metric_order:
                    yield r, k, name, float(self.metrics[name][r, k])


def _thread_budget() -> int:
    env = os.environ.get("IST_LAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigInvalid(f"IST_LAB_THREADS={env!r} is not an integer") from exc
    return os.cpu_count() or 1


def resolve_x0(cfg: RunConfig) -> NDArray:
    policy = cfg.x0_policy
    d = cfg.problem.d
    if isinstance(policy, str):
        if policy == "zeros":
            return np.zeros(d)
        if policy == "gaussian":
            policy = ("gaussian", cfg.seed)
    if isinstance(policy, tuple) and len(policy) == 2 and policy[0] == "gaussian":
        seed = cfg.seed if policy[1] is None else policy[1]
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        return rng.standard_normal(d)
    x0 = np.asarray(policy, dtype=np.float64)
    if x0.shape != (d,):
        raise ConfigInvalid(f"x0 vector must have length {d}")
    return x0


def run(cfg: RunConfig) -> Trace:
    """Execute all repeats of ``cfg`` and aggregate their metric records."""
    p = cfg.problem
    x0 = resolve_x0(cfg)
    K = cfg.K
    gammas = np.array([cfg.schedule.gamma_at(k) for k in range(K)])

    needs_star = any(m in cfg.metrics for m in ("f_gap_rel_log", "dist_L_to_xstar"))
    x_star = p.solution() if needs_star else None
    f_star = p.f(x_star) if needs_star else None
    if "f_gap_rel_log" in cfg.metrics:
        gap0 = max(p.f(x0) - f_star, 1e-300)
    x_inf = None
    if "dist_to_xinf" in cfg.metrics:
        if cfg.estimator.sketch is None:
            raise ConfigInvalid("dist_to_xinf needs a sketch-based estimator")
        x_inf = certificates.fixed_point(p, cfg.estimator.sketch)
    want_submodel = "submodel_loss_avg" in cfg.metrics
    L_inv = linalg.psd_pinv(p.L_bar) if "grad_sq_Linv" in cfg.metrics else None

    out = {m: np.full((cfg.repeats, K + 1), np.nan) for m in cfg.metrics}
    final_f = np.full(cfg.repeats, np.nan)
    diverged = np.full(cfg.repeats, -1, dtype=np.int64)
    iterates = np.full((cfg.repeats, K + 1, p.d), np.nan) if cfg.record_iterates else None

    L_bar = p.L_bar

    def metric_row(x, sample):
        vals = {}
        for name in cfg.metrics:
            if name == "f_gap_rel_log":
                rel = max(p.f(x) - f_star, 1e-300) / gap0
                vals[name] = np.log10(max(rel, 1e-300))
            elif name == "grad_sq":
                g = p.grad(x)
                vals[name] = float(g @ g)
            elif name == "grad_sq_Linv":
                g = p.grad(x)
                vals[name] = float(g @ (L_inv @ g))
            elif name == "dist_L_to_xstar":
                dx = x - x_star
                vals[name] = float(dx @ (L_bar @ dx))
            elif name == "dist_to_xinf":
                vals[name] = float(np.linalg.norm(x - x_inf))
            else:  # submodel_loss_avg
                total = 0.0
                for i in range(p.n):
                    total += p.f_client(i, sample.apply(i, x) if sample is not None else x)
                vals[name] = total / p.n
        return vals

    def one_repeat(r: int) -> None:
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(r,)))
        x = x0.copy()
        last_valid = x0
        for k in range(K + 1):
            if not np.isfinite(x).all():
                diverged[r] = k
                break
            if k < K:
                g, sample = estimators.estimate(cfg.estimator, p, x, rng)
            else:
                g = None
                sample = None
                if want_submodel and cfg.estimator.kind != "dgd":
                    _, sample = estimators.estimate(cfg.estimator, p, x, rng)
            vals = metric_row(x, sample)
            if any(not np.isfinite(v) or abs(v) > DIVERGENCE_LIMIT for v in vals.values()):
                diverged[r] = k
                break
            for name, v in vals.items():
                out[name][r, k] = v
            if iterates is not None:
                iterates[r, k] = x
            last_valid = x
            if k < K:
                x = x - gammas[k] * g
        final_f[r] = p.f(last_valid)

    workers = min(_thread_budget(), cfg.repeats)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(one_repeat, range(cfg.repeats)))
    else:
        for r in range(cfg.repeats):
            one_repeat(r)

    return Trace(
        metrics=out,
        final_f=final_f,
        diverged_at=diverged,
        gammas=gammas,
        x0=x0,
        iterates=iterates,
        metric_order=cfg.metrics,
    )


def sweep(cfg: RunConfig, gamma_list) -> list[Trace]:
    """One run per step size, sharing problem, seed, and initial point."""
    x0 = resolve_x0(cfg)
    traces = []
    for g in gamma_list:
        cfg_g = replace(cfg, schedule=cfg.schedule.with_gamma(float(g)), x0_policy=x0)
        traces.append(run(cfg_g))
    return traces
