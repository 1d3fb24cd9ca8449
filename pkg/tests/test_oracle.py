import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from annihilate.core import Configuration, SimParams, SystemSpec, run_raw, sample_initial
from annihilate.graph import cycle, make_complete, make_torus
from annihilate.oracle import (OracleError, brute_entangle_check, build_generator,
                               exact_density, occupancy_law, transient_solve)
from conftest import NU3


def _chain(counts, D_A=1.0, D_B=1.0, g=None):
    g = g or cycle(len(counts))
    return build_generator(g, Configuration(g, counts), SimParams(D_A, D_B, "0:1", 1.0))


def final_counts(g, xi0, params, seed):
    raw = run_raw(SystemSpec(g, xi0, params, seed), record=False)
    out = np.zeros(g.n_sites, dtype=np.int64)
    np.add.at(out, raw.final_pos[raw.alive], raw.label_type[raw.alive])
    return tuple(out.tolist())


# -- build_generator --------------------------------------------------------------


def test_two_cycle_pair_has_two_states_and_rate_two():
    chain = _chain([1, -1])
    assert chain.states == [(1, -1), (0, 0)]
    assert chain.generator[0, 1] == pytest.approx(2.0)


def test_single_particle_on_k3_moves_at_half_rate_to_each_site():
    g = make_complete(3)
    chain = _chain([1, 0, 0], D_A=1.0, g=g)
    assert chain.n_states == 3
    for j in (1, 2):
        assert chain.generator[0, j] == pytest.approx(0.5)


def test_three_cycle_state_count_depends_on_which_type_moves():
    # with both types mobile the A can also walk; with the A frozen only the six B moves remain
    assert _chain([1, -1, -1], 1.0, 1.0).n_states == 12
    assert _chain([1, -1, -1], 0.0, 1.0).n_states == 6


def test_state_cap_is_enforced():
    g = make_torus(2, 3)
    with pytest.raises(OracleError, match="state_cap"):
        build_generator(g, sample_initial(g, NU3, 1), SimParams(1, 1, NU3, 1.0), state_cap=5)


@given(st.lists(st.integers(-2, 2), min_size=2, max_size=5), st.sampled_from([0.0, 0.5, 1.0]))
def test_generator_rows_sum_to_zero(counts, D_B):
    chain = _chain(counts, 1.0, D_B)
    assert np.abs(np.asarray(chain.generator.sum(axis=1))).max() < 1e-12


# -- transient_solve -------------------------------------------------------------


def test_time_zero_is_the_initial_state():
    chain = _chain([1, -1, -1])
    p = transient_solve(chain, 0.0)
    assert p[0] == 1.0 and p.sum() == 1.0


def test_pair_survival_matches_closed_form():
    chain = _chain([1, -1])
    p = transient_solve(chain, 1.0, tol=1e-10)
    assert abs(p[0] - np.exp(-2)) < 1e-10


@given(st.lists(st.integers(-1, 2), min_size=3, max_size=5), st.floats(0.01, 3.0))
def test_solution_is_a_distribution(counts, t):
    p = transient_solve(_chain(counts, 1.0, 0.7), t, tol=1e-9)
    assert p.min() > -1e-12 and abs(p.sum() - 1) < 1e-9


def test_truncation_error_is_bounded_by_tolerances():
    chain = _chain([1, -1, -1, 1])
    a = transient_solve(chain, 2.0, tol=1e-4)
    b = transient_solve(chain, 2.0, tol=1e-11)
    assert np.abs(a - b).sum() < 1e-4 + 1e-11


def test_negative_time_is_rejected():
    with pytest.raises(OracleError):
        transient_solve(_chain([1, -1]), -1.0)


# -- exact_density -----------------------------------------------------------------


def test_single_type_density_is_constant():
    d = exact_density(_chain([1, 1, 0, 0]), 3.0)
    assert d.mu_a == pytest.approx(0.5, abs=1e-14) and d.mu_b == 0 and abs(d.theta) < 1e-14


def test_pair_density_at_time_one():
    d = exact_density(_chain([1, -1]), 1.0)
    assert abs(d.mu_a - np.exp(-2) / 2) < 1e-10
    assert abs(d.rho - np.exp(-2)) < 1e-10


@pytest.mark.parametrize("counts, D_B", [([1, -1], 1.0), ([1, -1, -1], 1.0), ([1, -1, -1], 0.0),
                                         ([2, -1, 0, -1], 0.5)])
def test_conservation_residual(counts, D_B):
    n = len(counts)
    mu_a0 = sum(max(c, 0) for c in counts) / n
    mu_b0 = sum(max(-c, 0) for c in counts) / n
    for t in (0.3, 1.0, 2.5):
        d = exact_density(_chain(counts, 1.0, D_B), t, tol=1e-12)
        assert abs((d.mu_a - mu_a0) + d.theta) < 1e-10
        assert abs((d.mu_b - mu_b0) + d.theta) < 1e-10


# -- simulator against the exact law ------------------------------------------------


@pytest.mark.parametrize("counts, D_A, D_B", [([1, -1], 1.0, 1.0), ([1, -1, -1], 1.0, 1.0),
                                              ([1, -1, -1], 0.0, 1.0)])
@pytest.mark.parametrize("t", [0.5, 1.0, 2.0])
def test_simulated_state_law_matches_exact_law(counts, D_A, D_B, t):
    g = cycle(len(counts))
    xi0 = Configuration(g, counts)
    params = SimParams(D_A, D_B, "0:1", t)
    chain = build_generator(g, xi0, params)
    law = occupancy_law(chain, t)
    R = 100_000
    seen = {}
    for s in range(R):
        k = final_counts(g, xi0, params, s)
        seen[k] = seen.get(k, 0) + 1
    assert set(seen) <= set(law)
    for state, p in law.items():
        phat = seen.get(state, 0) / R
        assert abs(phat - p) <= 3 * np.sqrt(p * (1 - p) / R) + 1e-12, state


# -- entanglement enumeration ----------------------------------------------------------


@pytest.mark.parametrize("g, n", [(make_complete(3), 2), (cycle(6), 4)])
def test_brute_entangle_check_passes(g, n):
    rep = brute_entangle_check(g, n)
    assert rep.passed and rep.max_tv < 1e-12


def test_cycle6_opposite_start():
    g = cycle(6)
    rep = brute_entangle_check(g, 4, y=(0,), z=(3,))
    assert rep.passed


def test_enumeration_size_is_checked():
    with pytest.raises(OracleError):
        brute_entangle_check(cycle(64), 5, max_cases=1000)


def test_all_ones_switches_give_the_walk_law():
    from annihilate.coupling import entangle_discrete
    from annihilate.oracle import _kernel_paths

    g = cycle(6)
    n = 4
    walk, mover = {}, {}
    for path, pr in _kernel_paths(g, (0,), n):
        walk[path] = walk.get(path, 0.0) + pr
        wy, _ = entangle_discrete(g, list(path), (2,), [1] * n)
        mover[tuple(wy)] = mover.get(tuple(wy), 0.0) + pr
    assert set(walk) == set(mover)
    assert max(abs(walk[k] - mover[k]) for k in walk) < 1e-15
