import os

import numpy as np
import pytest

from istlab import linalg
from istlab.certificates import estimator_bias, expected_iterate
from istlab.errors import ConfigInvalid
from istlab.estimators import EstimatorKind
from istlab.quadratics import gen_heterogeneous, gen_homogeneous, precondition_homogeneous
from istlab.runner import RunConfig, StepSchedule, run, sweep
from istlab.sketches import SketchKind


def scaled_het_cfg(p, gamma=0.5, K=10, seed=3, repeats=2, **kw):
    return RunConfig(
        problem=p,
        estimator=EstimatorKind.ist(SketchKind.scaled_perm_het()),
        schedule=StepSchedule.constant(gamma),
        K=K,
        seed=seed,
        repeats=repeats,
        **kw,
    )


class TestStepSchedule:
    def test_constant(self):
        s = StepSchedule.constant(0.3)
        assert s.gamma_at(0) == s.gamma_at(999) == 0.3

    def test_staircase_divides_periodically(self):
        s = StepSchedule.staircase(1.0, divide_by=10.0, period=100)
        assert s.gamma_at(0) == 1.0
        assert s.gamma_at(99) == 1.0
        assert s.gamma_at(100) == pytest.approx(0.1)
        assert s.gamma_at(250) == pytest.approx(0.01)

    def test_validation(self):
        with pytest.raises(ConfigInvalid):
            StepSchedule.constant(0.0)
        with pytest.raises(ConfigInvalid):
            StepSchedule.staircase(0.5, divide_by=1.0)
        with pytest.raises(ConfigInvalid):
            StepSchedule.staircase(0.5, period=0)

    def test_config_roundtrip(self):
        for s in (StepSchedule.constant(0.2), StepSchedule.staircase(0.9, 5.0, 50)):
            assert StepSchedule.from_config(s.to_config()) == s


class TestDeterminism:
    def test_same_config_bitwise_identical(self):
        p = gen_heterogeneous(4, 4, seed=1)
        cfg = scaled_het_cfg(p, metrics=("f_gap_rel_log", "grad_sq"))
        t1, t2 = run(cfg), run(cfg)
        for name in cfg.metrics:
            np.testing.assert_array_equal(t1.metrics[name], t2.metrics[name])
        np.testing.assert_array_equal(t1.final_f, t2.final_f)

    def test_thread_count_does_not_change_results(self):
        p = gen_heterogeneous(4, 4, seed=2)
        cfg = scaled_het_cfg(p, repeats=6, metrics=("grad_sq",))
        old = os.environ.get("IST_LAB_THREADS")
        try:
            os.environ["IST_LAB_THREADS"] = "1"
            t1 = run(cfg)
            os.environ["IST_LAB_THREADS"] = "4"
            t2 = run(cfg)
        finally:
            if old is None:
                os.environ.pop("IST_LAB_THREADS", None)
            else:
                os.environ["IST_LAB_THREADS"] = old
        np.testing.assert_array_equal(t1.metrics["grad_sq"], t2.metrics["grad_sq"])

    def test_dgd_equals_ist_identity_bitwise(self):
        p = gen_heterogeneous(3, 5, seed=3)
        base = dict(schedule=StepSchedule.constant(0.01), K=20, seed=7, repeats=2,
                    metrics=("grad_sq", "dist_L_to_xstar"))
        t_dgd = run(RunConfig(problem=p, estimator=EstimatorKind.dgd(), **base))
        t_ist = run(RunConfig(problem=p, estimator=EstimatorKind.ist(SketchKind.identity()), **base))
        for name in base["metrics"]:
            np.testing.assert_array_equal(t_dgd.metrics[name], t_ist.metrics[name])


class TestHomogeneousZeroVariance:
    def test_repeats_bitwise_identical_and_geometric(self):
        p, _ = precondition_homogeneous(gen_homogeneous(12, 12, seed=4))
        cfg = RunConfig(
            problem=p,
            estimator=EstimatorKind.ist(SketchKind.scaled_perm_homog()),
            schedule=StepSchedule.constant(0.3),
            K=12,
            seed=5,
            repeats=4,
            metrics=("dist_to_xinf",),
        )
        t = run(cfg)
        d = t.metrics["dist_to_xinf"]
        for r in range(1, 4):
            np.testing.assert_array_equal(d[r], d[0])
        ratios = d[0, 1:] / d[0, :-1]
        np.testing.assert_allclose(ratios, 0.7, rtol=1e-10)


class TestMultisetZeroVariance:
    def test_more_clients_than_coordinates_decays_deterministically(self):
        p, _ = precondition_homogeneous(gen_homogeneous(8, 4, seed=22))
        cfg = RunConfig(
            problem=p,
            estimator=EstimatorKind.ist(SketchKind.perm_multiset()),
            schedule=StepSchedule.constant(0.4),
            K=10,
            seed=23,
            repeats=3,
            metrics=("dist_to_xinf",),
        )
        t = run(cfg)
        d = t.metrics["dist_to_xinf"]
        for r in range(1, 3):
            np.testing.assert_array_equal(d[r], d[0])
        np.testing.assert_allclose(d[0, 1:] / d[0, :-1], 0.6, rtol=1e-9)


class TestHeterogeneousMeanRecursion:
    def test_mean_trajectory_matches_exact_recursion(self):
        p = gen_heterogeneous(4, 4, seed=6)
        cfg = scaled_het_cfg(p, gamma=0.5, K=12, seed=8, repeats=3000,
                             metrics=(), record_iterates=True)
        t = run(cfg)
        kind = SketchKind.scaled_perm_het()
        emp = t.iterates.mean(axis=0)
        se = t.iterates.std(axis=0) / np.sqrt(cfg.repeats)
        for k in (1, 4, 12):
            exact = expected_iterate(p, kind, t.x0, 0.5, k)
            assert np.all(np.abs(emp[k] - exact) <= 5.0 * se[k] + 1e-12)


class TestMetricsAndDivergence:
    def test_dgd_contracts_per_step(self):
        p = gen_heterogeneous(3, 8, seed=9).as_interpolation()
        vals = np.linalg.eigvalsh(p.L_bar)
        rho = 1.0 - vals[0] / vals[-1]
        cfg = RunConfig(
            problem=p,
            estimator=EstimatorKind.dgd(),
            schedule=StepSchedule.constant(1.0 / vals[-1]),
            K=40,
            seed=10,
            metrics=("dist_L_to_xstar",),
        )
        t = run(cfg)
        d = t.metrics["dist_L_to_xstar"][0]
        assert np.all(d[1:] <= rho * d[:-1] * (1.0 + 1e-8) + 1e-300)

    def test_divergence_marker_and_truncated_rows(self):
        p = gen_heterogeneous(3, 4, seed=11)
        lam_max = float(np.linalg.eigvalsh(p.L_bar).max())
        cfg = RunConfig(
            problem=p,
            estimator=EstimatorKind.dgd(),
            schedule=StepSchedule.constant(100.0 / lam_max),
            K=400,
            seed=12,
            metrics=("grad_sq",),
        )
        t = run(cfg)
        stop = int(t.diverged_at[0])
        assert stop > 0
        g = t.metrics["grad_sq"][0]
        assert np.isfinite(g[:stop]).all()
        assert np.isnan(g[stop:]).all()
        rows = list(t.rows())
        assert len(rows) == stop

    def test_k_zero_records_initial_metrics_only(self):
        p = gen_heterogeneous(2, 3, seed=13)
        cfg = scaled_het_cfg(p.as_interpolation(), K=0, repeats=2, metrics=("grad_sq",))
        t = run(cfg)
        assert t.metrics["grad_sq"].shape == (2, 1)
        assert len(list(t.rows())) == 2

    def test_submodel_loss_metric_finite_everywhere(self):
        p = gen_heterogeneous(2, 4, seed=14)
        cfg = scaled_het_cfg(p, K=5, repeats=2, metrics=("submodel_loss_avg",))
        t = run(cfg)
        assert np.isfinite(t.metrics["submodel_loss_avg"]).all()

    def test_f_gap_log_starts_at_zero(self):
        p = gen_heterogeneous(5, 5, seed=15)
        cfg = scaled_het_cfg(p, K=3, repeats=1, metrics=("f_gap_rel_log",))
        t = run(cfg)
        assert t.metrics["f_gap_rel_log"][0, 0] == 0.0

    def test_unknown_metric_rejected(self):
        p = gen_heterogeneous(2, 2, seed=16)
        with pytest.raises(ConfigInvalid):
            scaled_het_cfg(p, metrics=("nope",))

    def test_x0_policies(self):
        p = gen_heterogeneous(3, 3, seed=17)
        z = run(scaled_het_cfg(p.as_interpolation(), K=1, repeats=1,
                               x0_policy="zeros", metrics=("grad_sq",)))
        np.testing.assert_array_equal(z.x0, np.zeros(3))
        given = np.array([1.0, 2.0, 3.0])
        g = run(scaled_het_cfg(p, K=1, repeats=1, x0_policy=given, metrics=("grad_sq",)))
        np.testing.assert_array_equal(g.x0, given)


class TestSweep:
    def test_singleton_sweep_equals_run(self):
        p = gen_heterogeneous(3, 3, seed=18)
        cfg = scaled_het_cfg(p, gamma=0.4, K=8, repeats=2, metrics=("f_gap_rel_log",))
        t_single = run(cfg)
        (t_sweep,) = sweep(cfg, [0.4])
        np.testing.assert_array_equal(
            t_single.metrics["f_gap_rel_log"], t_sweep.metrics["f_gap_rel_log"]
        )

    def test_traces_share_initial_point(self):
        p = gen_heterogeneous(3, 3, seed=19)
        cfg = scaled_het_cfg(p, K=4, repeats=1, metrics=("grad_sq",))
        traces = sweep(cfg, [0.2, 0.5, 0.9])
        for t in traces[1:]:
            np.testing.assert_array_equal(t.x0, traces[0].x0)

    def test_plateau_not_below_bias_floor(self):
        # the mean iterate converges to x_inf regardless of the schedule, so
        # the realized plateau cannot undercut the bias-induced gap at x_inf
        p = gen_heterogeneous(6, 6, seed=20)
        h = estimator_bias(p)
        floor = 0.5 * linalg.weighted_sqnorm(h, p.L_bar)
        x_star = p.solution()
        f_star = p.f(x_star)
        for schedule in (
            StepSchedule.staircase(0.5, divide_by=10.0, period=300),
            StepSchedule.constant(0.005),
        ):
            cfg = RunConfig(
                problem=p,
                estimator=EstimatorKind.ist(SketchKind.scaled_perm_het()),
                schedule=schedule,
                K=1200,
                seed=21,
                repeats=3,
                metrics=("f_gap_rel_log",),
            )
            t = run(cfg)
            gap0 = p.f(t.x0) - f_star
            tail = t.metrics["f_gap_rel_log"][:, -120:]
            plateau_gap = np.mean(10.0**tail) * gap0
            assert plateau_gap >= 0.8 * floor
