import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from annihilate import oracle
from annihilate.core import (Annihilation, Configuration, Jump, MassLedger, SimParams,
                             SimulationError, SystemSpec, evolve, evolve_spec, read_jsonl,
                             resample_particle, sample_initial, truncate)
from annihilate.graph import cycle, make_complete, make_product, make_torus, make_tree
from annihilate.stats import conservation_audit, truncation_stability
from conftest import NU3, chi2_pvalue, within
from reference import reference_run

GRAPHS = [cycle(2), cycle(9), make_torus(2, 4), make_complete(5),
          make_product([cycle(3), make_complete(3)], [0.5, 0.5]),
          make_torus(1, 12, {(1,): 0.3, (-1,): 0.3, (3,): 0.2, (-3,): 0.2})]
RATES = [(1.0, 1.0), (1.0, 0.5), (1.0, 0.0), (0.0, 2.0), (0.3, 1.7)]
NUS = [NU3, "+1:0.2,-1:0.2,+2:0.1,-2:0.1,0:0.4", "+1:0.5,-2:0.25,0:0.25"]


def _pair(D_B):
    g = cycle(2)
    xi0 = Configuration(g, [1, -1])
    return g, xi0, SimParams(1.0, D_B, NU3, 1.0)


# -- sample_initial -------------------------------------------------------------


def test_point_mass_at_zero_gives_empty_configuration():
    xi = sample_initial(cycle(50), "0:1", 3)
    assert xi.n_a == xi.n_b == 0


def test_point_mass_at_two_fills_every_site():
    g = make_torus(2, 6)
    xi = sample_initial(g, "+2:1", 3)
    assert np.all(xi.counts == 2) and xi.n_a == 2 * g.n_sites


def test_symmetric_field_has_mean_near_zero():
    xi = sample_initial(make_torus(1, 10_000), "+1:0.5,-1:0.5", 5)
    assert abs(xi.counts.mean()) <= 3 / np.sqrt(10_000)


@given(st.integers(0, 2**32))
def test_initial_field_is_a_function_of_the_seed(seed):
    g = cycle(40)
    assert sample_initial(g, NU3, seed) == sample_initial(g, NU3, seed)


# -- evolve: closed forms ------------------------------------------------------


def test_single_type_never_annihilates():
    g = make_torus(2, 5)
    log, ledger = evolve(g, sample_initial(g, "+1:1", 0), SimParams(1, 1, "+1:1", 20.0), 0)
    assert log.n_annihilations == 0 and np.all(ledger.rho == 1.0)
    assert len(log) > 0


@pytest.mark.parametrize("D_B, target", [(1.0, np.exp(-2)), (0.0, np.exp(-1))])
def test_two_cycle_pair_survival(D_B, target):
    g, xi0, params = _pair(D_B)
    R = 100_000
    alive = 0
    for seed in range(R):
        log, _ = evolve(g, xi0, params, seed)
        alive += log.n_annihilations == 0
    p = alive / R
    assert within(p, np.sqrt(p * (1 - p) / R), target)


def test_absent_label_has_time_zero_and_sole_particle_is_censored():
    g = cycle(6)
    xi0 = Configuration.from_sites(g, {(0,): 1})
    log, _ = evolve(g, xi0, SimParams(1, 1, "0:1", 5.0), 1)
    assert log.annihilation_time(((3,), 1)) == 0.0
    assert log.annihilation_time(((0,), 1)) == np.inf and log.censored(((0,), 1))


def test_pair_annihilates_at_the_first_logged_jump():
    g, xi0, params = _pair(1.0)
    for seed in range(50):
        log, _ = evolve(g, xi0, params, seed)
        if len(log) == 0:
            continue
        first = log.event(0)
        assert isinstance(first, Annihilation)
        assert log.annihilation_time(((0,), 1)) == first.t == log.annihilation_time(((1,), -1))


def test_invalid_inputs_are_rejected():
    with pytest.raises(SimulationError):
        SimParams(1, 1, NU3, 0.0)
    with pytest.raises(SimulationError):
        SimParams(0, 0, NU3, 1.0)
    with pytest.raises(SimulationError):
        SimParams(1, 1, "+1:0.3,0:0.3", 1.0)
    with pytest.raises(Exception):
        sample_initial(make_tree(3), NU3, 0)
    g = cycle(4)
    with pytest.raises(SimulationError):
        evolve(cycle(5), Configuration(g, [0, 1, 0, 0]), SimParams(1, 1, NU3, 1.0), 0)


# -- invariants ---------------------------------------------------------------


@given(st.sampled_from(GRAPHS), st.sampled_from(RATES), st.sampled_from(NUS),
       st.integers(0, 2**40))
def test_conservation_and_no_coexistence(g, rates, nu, seed):
    params = SimParams(*rates, nu, 6.0)
    xi0 = sample_initial(g, nu, seed)
    log, ledger = evolve(g, xi0, params, seed)
    assert np.all(ledger.n_a - ledger.n_b == xi0.n_a - xi0.n_b)
    assert np.all(np.diff(ledger.rho) <= 0)
    assert ledger.annihilations[-1] == log.n_annihilations
    report = conservation_audit([log])
    assert report.ok, report.violations[:3]
    assert np.all(np.diff(log.t) > 0) or log.ties > 0


@given(st.sampled_from(GRAPHS), st.sampled_from(RATES), st.integers(0, 2**40))
def test_runs_are_deterministic(g, rates, seed):
    params = SimParams(*rates, NU3, 4.0)
    xi0 = sample_initial(g, NU3, seed)
    a, _ = evolve(g, xi0, params, seed)
    b, _ = evolve(g, xi0, params, seed)
    assert a.identical(b)


@given(st.sampled_from(GRAPHS[:4]), st.sampled_from(RATES), st.integers(0, 2**40))
def test_engine_matches_literal_reference(g, rates, seed):
    params = SimParams(*rates, NU3, 3.0)
    xi0 = sample_initial(g, NU3, seed)
    log, _ = evolve(g, xi0, params, seed)
    events, death, final = reference_run(g, xi0.counts, *rates, seed, 3.0)
    assert len(events) == len(log)
    for i, (t, kind, p, q, u, w) in enumerate(events):
        assert (log.t[i], log.kind[i], log.p[i], log.src[i], log.dst[i]) == (t, kind, p, u, w)
        if kind:
            assert log.q[i] == q
    assert np.array_equal(log.death, death)


def _monotone_pair(seed):
    g = cycle(32)
    rs = np.random.default_rng(seed)
    low = rs.integers(-2, 3, size=32)
    high = low + rs.integers(0, 2, size=32) * rs.integers(0, 2, size=32)
    return g, Configuration(g, low), Configuration(g, high)


def check_monotone(seed, D_A=1.0, D_B=1.0, t_max=10.0):
    """True when every label's annihilation time respects the pointwise order."""
    g, lo, hi = _monotone_pair(seed)
    params = SimParams(D_A, D_B, NU3, t_max)
    a, _ = evolve(g, lo, params, seed)
    b, _ = evolve(g, hi, params, seed)
    labels = set(lo.labels()) | set(hi.labels())
    for s, j in labels:
        site = g.site(s)
        t, t2 = a.annihilation_time((site, j)), b.annihilation_time((site, j))
        if j > 0 and not t <= t2:
            return False
        if j < 0 and not t2 <= t:
            return False
    return True


@pytest.mark.parametrize("rates", RATES[:3])
def test_monotonicity_under_shared_instructions(rates):
    assert all(check_monotone(s, *rates) for s in range(40))


def test_bravest_orientation_does_not_change_the_law():
    # minimal instead of maximal braveness: same law, compared through the exact chain
    g = make_complete(4)
    xi0 = Configuration(g, [2, -1, -1, 0])
    t = 0.7
    chain = oracle.build_generator(g, xi0, SimParams(1.0, 0.5, NU3, t))
    exact = oracle.exact_density(chain, t).rho
    R = 20_000
    for pick in (max, min):
        rho = np.array([(np.abs(reference_run(g, xi0.counts, 1.0, 0.5, s, t, pick)[2]).sum())
                        for s in range(R)]) / g.n_sites
        assert within(rho.mean(), rho.std() / np.sqrt(R), exact)


def test_single_particle_law_matches_exact_walk():
    g = make_complete(4)
    xi0 = Configuration(g, [1, 0, 0, 0])
    t = 0.8
    law = oracle.single_walk_law(g, 0, 1.0, t)
    params = SimParams(1, 1, "0:1", t)
    R = 20_000
    seen = {}
    for s in range(R):
        log, _ = evolve(g, xi0, params, s)
        k = np.searchsorted(log.t, t, side="right")
        x = int(log.dst[k - 1]) if k else 0
        seen[x] = seen.get(x, 0) + 1
    assert chi2_pvalue(seen, law, R) > 0.01


# -- truncation and resampling --------------------------------------------------


def test_truncation_edge_cases():
    g = cycle(20)
    xi = sample_initial(g, NU3, 2)
    assert truncate(xi, (0,), 10) == xi
    only = truncate(xi, (4,), 0)
    assert np.count_nonzero(only.counts) <= 1 and only[(4,)] == xi[(4,)]


def test_truncation_stabilizes():
    rep = truncation_stability(cycle(64), SimParams(1, 1, NU3, 10.0), [8, 16, 24], range(1000))
    assert min(rep.stable_fraction()) >= 0.95


def test_resampling_with_salt_zero_is_the_identity():
    g = cycle(12)
    xi0 = sample_initial(g, NU3, 4)
    spec = SystemSpec(g, xi0, SimParams(1, 1, NU3, 5.0), 4)
    label = next((g.site(s), j) for s, j in xi0.labels())
    changed = resample_particle(spec, label, 7)
    assert changed != spec
    back = resample_particle(changed, label, 0)
    assert evolve_spec(back)[0].identical(evolve_spec(spec)[0])
    with pytest.raises(SimulationError):
        resample_particle(spec, ((0,), 99), 1)


# -- serialization -------------------------------------------------------------


@pytest.mark.parametrize("suffix", ["", ".gz"])
def test_event_log_and_ledger_round_trip(tmp_path, suffix):
    g = make_torus(2, 4)
    log, ledger = evolve(g, sample_initial(g, NU3, 1), SimParams(1, 1, NU3, 5.0), 1)
    path = tmp_path / f"events.jsonl{suffix}"
    log.to_jsonl(path)
    rows = read_jsonl(path)
    assert len(rows) == len(log)
    for rec, ev in zip(rows, log):
        assert rec["t"] == ev.t
        if isinstance(ev, Jump):
            assert rec["kind"] == "jump" and tuple(rec["to"]) == ev.dst
        else:
            assert rec["kind"] == "annih" and tuple(rec["site"]) == ev.site
    csv_path = tmp_path / f"ledger.csv{suffix}"
    ledger.to_csv(csv_path)
    back = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
    assert np.array_equal(back[:, 1].astype(int), ledger.n_a)
    assert np.array_equal(back[:, 0], ledger.t)


def test_ledger_lookup_is_piecewise_constant():
    g, xi0, params = _pair(1.0)
    log, ledger = evolve(g, xi0, params, 0)
    assert ledger.at(0.0) == (1, 1, 0)
    if log.n_annihilations:
        assert ledger.at(float(log.t[-1])) == (0, 0, 1)
    assert isinstance(ledger, MassLedger)
