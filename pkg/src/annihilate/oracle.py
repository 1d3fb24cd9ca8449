"""Exact ground truth on tiny instances.

``build_generator`` enumerates every occupancy configuration reachable from a
given start and writes down the jump rates (braveness integrates out: the
configuration law does not depend on which resident dies).
``transient_solve`` is uniformization with a Poisson-tail stopping rule.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from itertools import product as iproduct

import numpy as np
from scipy import sparse, stats

from .core import Configuration, SimParams


class OracleError(RuntimeError):
    pass


@dataclass
class ExactChain:
    graph: object
    params: SimParams
    states: list
    generator: sparse.csr_matrix
    uniformization_rate: float
    index: dict = field(repr=False, default=None)

    @property
    def n_states(self):
        return len(self.states)

    @property
    def n_sites(self):
        return self.graph.n_sites

    def initial(self):
        p = np.zeros(self.n_states)
        p[0] = 1.0
        return p


def _moves(state, tab, rates):
    """Yield ``(rate, next_state)`` for every single-particle jump."""
    for x, c in enumerate(state):
        if c == 0:
            continue
        sigma = 1 if c > 0 else -1
        rate = rates[sigma] * abs(c)
        if rate == 0:
            continue
        for e in range(tab.indptr[x], tab.indptr[x + 1]):
            y = int(tab.dest[e])
            if y == x:
                continue
            nxt = list(state)
            nxt[x] -= sigma
            nxt[y] += sigma  # an opposite resident absorbs the jumper: |count| drops by one
            yield rate * tab.prob[e], tuple(nxt)


def build_generator(graph, xi0: Configuration, params: SimParams,
                    state_cap: int = 20_000) -> ExactChain:
    tab = graph.transition_table()
    rates = {1: float(params.D_A), -1: float(params.D_B)}
    start = tuple(int(c) for c in xi0.counts)
    index = {start: 0}
    states = [start]
    rows, cols, vals = [], [], []
    queue = deque([start])
    while queue:
        s = queue.popleft()
        i = index[s]
        out = 0.0
        for rate, nxt in _moves(s, tab, rates):
            j = index.get(nxt)
            if j is None:
                if len(states) >= state_cap:
                    raise OracleError(
                        f"reachable state space exceeds state_cap={state_cap} "
                        f"({len(states)} states enumerated so far)")
                j = index[nxt] = len(states)
                states.append(nxt)
                queue.append(nxt)
            rows.append(i)
            cols.append(j)
            vals.append(rate)
            out += rate
        rows.append(i)
        cols.append(i)
        vals.append(-out)
    n = len(states)
    q = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
    q.sum_duplicates()
    lam = float(max(-q.diagonal().min(), 0.0))
    return ExactChain(graph, params, states, q, lam, index)


def transient_solve(chain: ExactChain, t: float, tol: float = 1e-10, p0=None) -> np.ndarray:
    """Distribution over ``chain.states`` at time ``t``.

    The uniformized series is cut where the Poisson tail drops below ``tol``.
    """
    if t < 0:
        raise OracleError("t must be nonnegative")
    if not 0 < tol < 1:
        raise OracleError("tol must lie in (0, 1)")
    p = chain.initial() if p0 is None else np.asarray(p0, dtype=float)
    lam = chain.uniformization_rate
    if t == 0 or lam == 0:
        return p.copy()
    mu = lam * t
    k_max = int(stats.poisson.isf(tol, mu)) + 1
    while stats.poisson.sf(k_max, mu) >= tol:
        k_max += 1
    weights = stats.poisson.pmf(np.arange(k_max + 1), mu)
    pt = chain.generator.T.tocsr() / lam
    term = p.copy()
    out = weights[0] * term
    for k in range(1, k_max + 1):
        term = term + pt @ term
        out += weights[k] * term
    return out


@dataclass(frozen=True)
class ExactDensity:
    mu_a: float
    mu_b: float
    rho: float
    theta: float


def exact_density(chain: ExactChain, t: float, tol: float = 1e-10) -> ExactDensity:
    dist = transient_solve(chain, t, tol)
    dist = dist / dist.sum()  # the cut Poisson tail only removes mass
    arr = np.array(chain.states)
    n_a = np.where(arr > 0, arr, 0).sum(axis=1)
    n_b = np.where(arr < 0, -arr, 0).sum(axis=1)
    v = chain.n_sites
    mu_a = float(dist @ n_a) / v
    mu_b = float(dist @ n_b) / v
    theta = float(dist @ (n_a[0] - n_a)) / v
    return ExactDensity(mu_a, mu_b, mu_a + mu_b, theta)


def occupancy_law(chain: ExactChain, t: float, tol: float = 1e-10) -> dict:
    """``{state: probability}`` at time ``t``."""
    return dict(zip(chain.states, transient_solve(chain, t, tol)))


def single_walk_law(graph, start, rate: float, t: float, tol: float = 1e-12) -> dict:
    """Position law of one rate-``rate`` walk at time ``t``, keyed by site."""
    counts = np.zeros(graph.n_sites, dtype=np.int64)
    counts[graph.index(start)] = 1
    chain = build_generator(graph, Configuration(graph, counts), SimParams(rate, 0.0, t_max=t))
    dist = transient_solve(chain, t, tol)
    return {graph.site(int(np.flatnonzero(s)[0])): float(pr) for s, pr in zip(chain.states, dist)}


# ---------------------------------------------------------------------------
# exhaustive check of the discrete entangled construction


@dataclass
class EntangleReport:
    graph: str
    n_steps: int
    y: object
    z: object
    paths: int
    switch_sequences: int
    distance_violations: int
    mover_violations: int
    max_tv: float
    tol: float = 1e-12

    @property
    def passed(self):
        return (self.distance_violations == 0 and self.mover_violations == 0
                and self.max_tv < self.tol)


def _kernel_paths(graph, start, n):
    """All length-``n`` kernel paths from ``start`` with their probabilities."""
    paths = [((start,), 1.0)]
    for _ in range(n):
        nxt = []
        for path, pr in paths:
            for v, p in _row(graph, path[-1]):
                nxt.append((path + (v,), pr * p))
        paths = nxt
    return paths


def _row(graph, x):
    merged: dict = {}
    for v, p in graph.kernel_row(x):
        if p > 0:
            merged[v] = merged.get(v, 0.0) + p
    return list(merged.items())


def _direct_prob(graph, wy, wz, ell):
    """Probability of the pair of paths under "the mover steps by p, the other stays"."""
    pr = 1.0
    for n, lab in enumerate(ell):
        mover, rest = (wy, wz) if lab == 1 else (wz, wy)
        if rest[n + 1] != rest[n]:
            return 0.0
        pr *= graph.kernel(mover[n], mover[n + 1])
        if pr == 0.0:
            return 0.0
    return pr


def brute_entangle_check(graph, n_steps: int, y=None, z=None, max_cases=2_000_000,
                         tol: float = 1e-12) -> EntangleReport:
    """Enumerate every kernel path ``Z`` from ``y`` and every switch sequence."""
    from .coupling.entangle import entangle_discrete

    if not graph.finite:
        raise OracleError("brute_entangle_check needs a finite graph")
    sites = graph.sites()
    y = sites[0] if y is None else y
    z = sites[-1] if z is None else z
    paths = _kernel_paths(graph, y, n_steps)
    if len(paths) * 2 ** n_steps > max_cases:
        raise OracleError(f"enumeration too large: {len(paths)} paths x {2 ** n_steps} sequences")
    dist_bad = mover_bad = 0
    max_tv = 0.0
    for ell in iproduct((1, 2), repeat=n_steps):
        law: dict = {}
        for path, pr in paths:
            wy, wz = entangle_discrete(graph, list(path), z, list(ell))
            for n in range(n_steps + 1):
                if graph.distance(wy[n], wz[n]) != graph.distance(path[n], z):
                    dist_bad += 1
            for n, lab in enumerate(ell):
                rest = wz if lab == 1 else wy
                if rest[n + 1] != rest[n]:
                    mover_bad += 1
            key = (tuple(wy), tuple(wz))
            law[key] = law.get(key, 0.0) + pr
        covered = 0.0
        diff = 0.0
        for (wy, wz), pr in law.items():
            q = _direct_prob(graph, wy, wz, ell)
            covered += q
            diff += abs(pr - q)
        tv = 0.5 * (diff + max(0.0, 1.0 - covered))
        max_tv = max(max_tv, tv)
    return EntangleReport(repr(graph), n_steps, y, z, len(paths), 2 ** n_steps,
                          dist_bad, mover_bad, max_tv, tol)
