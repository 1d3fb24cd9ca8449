import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from annihilate import rng


@given(st.integers(0, 2**64 - 1), st.integers(0, 10**6), st.integers(-50, 50),
       st.integers(0, 1000))
def test_streams_are_pure_functions_of_their_key(seed, site, j, counter):
    a = rng.Stream(seed, rng.PARTICLE, site, j)
    b = rng.Stream(seed, rng.PARTICLE, site, j)
    assert a.uniform(counter) == b.uniform(counter)
    assert 0.0 <= a.uniform(counter) < 1.0


def test_distinct_labels_give_distinct_streams():
    draws = {rng.Stream(1, rng.PARTICLE, s, j).uniform(0) for s in range(50) for j in (-2, -1, 1, 2)}
    assert len(draws) == 200


def test_salt_and_domain_change_the_stream():
    base = rng.Stream(5, rng.PARTICLE, 3, 1)
    assert base.uniform(0) != rng.Stream(5, rng.PARTICLE, 3, 1, salt=1).uniform(0)
    assert base.uniform(0) != rng.Stream(5, rng.TRACER_WALK, 3, 1).uniform(0)


def test_uniform_and_exponential_moments():
    s = rng.Stream(11, rng.WANDER, 0, 0)
    u = np.array([s.uniform(c) for c in range(40_000)])
    assert abs(u.mean() - 0.5) < 3 * np.sqrt(1 / 12 / len(u))
    e = np.array([s.exponential(c, 2.0) for c in range(40_000)])
    assert abs(e.mean() - 0.5) < 3 * 0.5 / np.sqrt(len(e))
    # consecutive draws are uncorrelated
    assert abs(np.corrcoef(u[:-1], u[1:])[0, 1]) < 4 / np.sqrt(len(u))


def test_site_uniforms_match_single_draws():
    seed = rng.to_seed(9)
    arr = rng.site_uniforms(seed, rng.INITIAL, 10, 0)
    for x in range(10):
        assert arr[x] == rng.Stream(9, rng.INITIAL, x).uniform(0)


def test_step_index_inverts_the_cdf():
    cum = np.array([0.25, 0.5, 1.0, 0.5, 1.0])
    assert rng.step_index(cum, 0, 3, 0.0) == 0
    assert rng.step_index(cum, 0, 3, 0.3) == 1
    assert rng.step_index(cum, 0, 3, 0.99) == 2
    assert rng.step_index(cum, 3, 5, 0.6) == 4


def test_negative_seeds_are_masked():
    assert rng.to_seed(-1) == np.uint64(2**64 - 1)
