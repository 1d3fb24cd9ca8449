import dataclasses
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from annihilate.core import Configuration, SimParams, evolve, sample_initial
from annihilate.graph import cycle, make_complete, make_torus
from annihilate.stats import (DensityCurve, ReplicaError, complete_graph_escape,
                              conservation_audit, escape_probability, fit_exponent, log_grid,
                              lower_bound_audit, recurrence_counts, run_replicas,
                              truncation_stability)
from conftest import NU3, NU_EQ, within


def pair_on_two_cycle(graph, seed):
    return Configuration(graph, [1, -1])


def single_a_uniform_start(graph, seed):
    counts = np.zeros(graph.n_sites, dtype=np.int64)
    counts[seed % graph.n_sites] = 1
    return Configuration(graph, counts)


def failing_start(graph, seed):
    if seed == 3:
        raise RuntimeError("boom")
    return sample_initial(graph, NU3, seed)


# -- grids and curves -------------------------------------------------------------


def test_grid_has_32_points_per_decade_and_ends_at_t_max():
    g = log_grid(1000.0)
    assert g[-1] == 1000.0 and g[0] == pytest.approx(0.1)
    per_decade = np.sum((g >= 1) & (g < 10))
    assert per_decade == 32
    assert np.all(np.diff(g) > 0)
    assert log_grid(73.0)[-1] == 73.0


def test_single_replica_reproduces_a_run():
    g = cycle(40)
    params = SimParams(1, 1, NU3, 20.0)
    curve = run_replicas((g, params), 1, 5)
    _, ledger = evolve(g, sample_initial(g, NU3, 5), params, 5)
    for i, t in enumerate(curve.t):
        n_a, n_b, ann = ledger.at(t)
        assert (curve.n_a[0, i], curve.n_b[0, i], curve.annihilations[0, i]) == (n_a, n_b, ann)


def test_single_type_curve_is_flat():
    curve = run_replicas((cycle(30), SimParams(1, 1, "+1:1", 10.0)), 4, 0)
    assert np.all(curve.mean("rho") == 1.0) and np.all(curve.stderr("rho") == 0.0)


def test_pair_benchmark_density_at_one():
    params = SimParams(1, 1, NU3, 1.0)
    curve = run_replicas((cycle(2), params), 100_000, 0, grid=[1.0], xi0_fn=pair_on_two_cycle)
    rho, se = curve.at(1.0)
    assert within(rho, se, np.exp(-2))


def test_rho_is_nonincreasing_per_replica():
    curve = run_replicas((cycle(64), SimParams(1, 0.5, NU3, 30.0)), 10, 0)
    assert np.all(np.diff(curve.per_replica("rho"), axis=1) <= 0)
    assert np.all(np.diff(curve.per_replica("theta"), axis=1) >= 0)


def test_aggregate_is_deterministic_and_order_independent(tmp_path):
    spec = (cycle(64), SimParams(1, 1, NU3, 10.0))
    a = run_replicas(spec, 6, 11)
    b = run_replicas(spec, 6, 11, jobs=2)
    a.to_csv(tmp_path / "a.csv")
    b.to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    header = (tmp_path / "a.csv").read_text().splitlines()[0]
    assert header == "t,muA_mean,muA_se,muB_mean,muB_se,rho_mean,rho_se,theta_mean"


def test_failing_replica_is_named():
    with pytest.raises(ReplicaError) as err:
        run_replicas((cycle(16), SimParams(1, 1, NU3, 2.0)), 5, 0, xi0_fn=failing_start)
    assert err.value.seed == 3


# -- fitting ------------------------------------------------------------------------


@pytest.mark.parametrize("power, c", [(-0.25, 1.0), (-1.0, 0.3), (-0.5, 2.0)])
def test_exact_power_laws_are_recovered(power, c):
    t = log_grid(1e4, t_min=1.0)
    curve = DensityCurve.synthetic(t, c * t ** power)
    fit = fit_exponent(curve, (10, 1e4))
    assert abs(fit.slope - power) < 1e-12
    assert fit.ci[0] <= fit.slope <= fit.ci[1]


def test_fit_needs_enough_points_and_positive_density():
    t = log_grid(100.0, t_min=1.0)
    with pytest.raises(ValueError, match="8"):
        fit_exponent(DensityCurve.synthetic(t, t ** -0.5), (10, 11))
    rho = t ** -0.5
    rho[t > 50] = 0.0
    with pytest.raises(ValueError, match="nonpositive"):
        fit_exponent(DensityCurve.synthetic(t, rho), (10, 100))


def test_bootstrap_ci_on_simulated_decay():
    curve = run_replicas((cycle(1024), SimParams(1, 1, NU_EQ, 200.0)), 8, 0)
    fit = fit_exponent(curve, (10, 200), n_boot=200, seed=1)
    assert fit.ci[0] <= fit.slope <= fit.ci[1]
    assert -0.6 < fit.slope < 0
    assert fit.n_points >= 8


def test_wrapped_times_are_excluded_from_the_window():
    curve = run_replicas((cycle(32), SimParams(1, 1, NU_EQ, 400.0)), 4, 0)
    assert np.isfinite(curve.wrap).any()
    fit = fit_exponent(curve, (1, 400))
    assert fit.window[1] <= curve.wrap_quantiles((0.05,))[0.05]


def test_lower_bound_audit_on_synthetic_curves():
    t = log_grid(1000.0, t_min=1.0)
    assert lower_bound_audit(DensityCurve.synthetic(t, 0.5 / t), (10, 1000))["holds"]
    assert not lower_bound_audit(DensityCurve.synthetic(t, 0.01 / t), (10, 1000))["holds"]


# -- recurrence -----------------------------------------------------------------------


def test_empty_system_has_no_visits():
    rep = recurrence_counts((cycle(16), SimParams(1, 1, "0:1", 50.0)), (0,), [10, 50], 5)
    assert not rep.counts.any()


def test_single_walker_visits_at_the_stationary_rate():
    g = cycle(8)
    ladder = [10.0, 50.0, 100.0]
    rep = recurrence_counts((g, SimParams(1, 1, "0:1", 100.0)), (0,), ladder, 800,
                            xi0_fn=single_a_uniform_start)
    assert np.all(np.diff(rep.counts, axis=1) >= 0)
    for k, T in enumerate(ladder):
        c = rep.counts[:, k]
        assert within(c.mean(), c.std(ddof=1) / np.sqrt(len(c)), T / 8)


def test_recurrence_csv(tmp_path):
    rep = recurrence_counts((cycle(16), SimParams(1, 1, NU3, 20.0)), (0,), [5, 20], 3)
    rep.to_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "seed,T=5.0,T=20.0" and len(lines) == 4


# -- escape -----------------------------------------------------------------------------


def test_complete_graph_escape_matches_closed_form():
    g = make_complete(101)
    rep = escape_probability(g, 1.0, [0.5, 2.0, 5.0], 20_000, seed=3)
    for T, gh, se in zip(rep.horizons, rep.gamma_hat, rep.gamma_se):
        assert within(gh, se, complete_graph_escape(101, 1.0, T))


def test_closed_form_limits():
    assert complete_graph_escape(5, 1.0, 0.0) == pytest.approx(1.0)
    # for huge n a return is almost impossible
    assert complete_graph_escape(10**6, 1.0, 3.0) == pytest.approx(1.0, abs=1e-5)


def test_doubling_the_rate_doubles_the_range_slope():
    g = make_torus(3, 64)
    T = 20.0
    fast = escape_probability(g, 2.0, [T], 4000, seed=1)
    slow = escape_probability(g, 1.0, [2 * T], 4000, seed=2)
    se = np.hypot(fast.range_se[0] / T, 2 * slow.range_se[0] / (2 * T))
    assert abs(fast.range_per_time[0] - 2 * slow.range_per_time[0]) <= 3 * se


def test_recurrent_torus_escape_decreases():
    rep = escape_probability(make_torus(1, 4096), 1.0, [10, 100, 1000], 4000)
    assert rep.gamma_hat[0] > rep.gamma_hat[1] > rep.gamma_hat[2]


def test_wrap_warning_is_raised():
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        rep = escape_probability(cycle(8), 1.0, [1.0, 200.0], 200)
    assert rep.wrap_warning == [False, True]
    assert any("wrap" in str(w.message) for w in caught)


# -- audits -----------------------------------------------------------------------------


def _log():
    g = make_torus(2, 6)
    log, _ = evolve(g, sample_initial(g, NU3, 2), SimParams(1, 1, NU3, 10.0), 2)
    return log


def test_genuine_logs_pass_the_audit():
    assert conservation_audit([_log(), _log()]).ok


@given(st.integers(0, 10_000), st.sampled_from(["src", "dst", "kind", "q", "t"]))
def test_forged_events_are_located(pos, column):
    log = _log()
    i = pos % len(log)
    arr = getattr(log, column).copy()
    if column == "t":
        if i == 0:
            return
        arr[i] = arr[i - 1] - 1.0
    elif column == "kind":
        arr[i] = 1 - arr[i]
    elif column == "q":
        if log.kind[i] == 0:
            return
        arr[i] = log.p[i]
    else:
        arr[i] = (arr[i] + 1) % log.graph.n_sites
    forged = dataclasses.replace(log, **{column: arr})
    rep = conservation_audit([forged])
    assert not rep.ok
    assert min(v[1] for v in rep.violations) <= i or column == "dst"


def test_truncation_report_summary():
    rep = truncation_stability(cycle(64), SimParams(1, 1, NU3, 10.0), [8, 16, 24], range(50))
    s = rep.summary()
    assert s["seeds"] == 50 and len(s["stable_fraction"]) == 2
    assert all(0.0 <= f <= 1.0 for f in s["stable_fraction_given_present"])
