from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import rng
from ..core import Configuration, parse_nu


class CouplingError(ValueError):
    pass


@dataclass
class CoupledInit:
    """Pair ``(xi0, xim0)`` differing by ``+K`` on ``plus`` and ``-K`` on ``minus``.

    ``plus``/``minus`` hold site indices.
    """

    xi0: Configuration
    xim0: Configuration
    plus: np.ndarray
    minus: np.ndarray
    m: float
    n: int
    K: int

    @property
    def graph(self):
        return self.xi0.graph

    @property
    def discrepancy_sites(self):
        return np.union1d(self.plus, self.minus)

    def difference(self) -> np.ndarray:
        return self.xim0.counts - self.xi0.counts

    def check(self):
        diff = self.difference()
        expect = np.zeros_like(diff)
        expect[self.plus] = self.K
        expect[self.minus] = -self.K
        if not np.array_equal(diff, expect):
            raise CouplingError("initial difference is not K on A+ and -K on A-")


def max_m(nu, n: int, K: int) -> float:
    probs = dict(parse_nu(nu))
    return 2.0 * min(probs.get(n, 0.0), probs.get(n + K, 0.0))


def couple_initial(xi0: Configuration, nu, m: float, n: int, K: int, seed: int) -> CoupledInit:
    """Flip ``n -> n+K`` w.p. ``m/(2 nu(n))`` and ``n+K -> n`` w.p. ``m/(2 nu(n+K))``.

    Both marginals stay i.i.d. with law ``nu``; each site lands in ``plus`` or
    ``minus`` with probability ``m/2``.
    """
    if K < 1:
        raise CouplingError("K must be a positive integer")
    probs = dict(parse_nu(nu))
    bound = max_m(nu, n, K)
    if probs.get(n, 0.0) <= 0 or probs.get(n + K, 0.0) <= 0:
        raise CouplingError(f"need nu({n}) > 0 and nu({n + K}) > 0")
    if not 0 <= m <= bound:
        raise CouplingError(
            f"m={m} too large: the coupling needs m <= 2 min(nu(n), nu(n+K)) = {bound}")
    counts = xi0.counts
    xim = counts.copy()
    if m > 0:
        u = rng.site_uniforms(rng.to_seed(seed), rng.COUPLING, len(counts), 0)
        r1 = m / (2 * probs[n])
        r2 = m / (2 * probs[n + K])
        up = (counts == n) & (u <= r1)
        down = (counts == n + K) & (u <= r2)
        xim[up] = n + K
        xim[down] = n
    else:
        up = down = np.zeros(len(counts), dtype=bool)
    return CoupledInit(xi0, Configuration(xi0.graph, xim), np.flatnonzero(up),
                       np.flatnonzero(down), m, n, K)


def default_m(delta: float, K: int, t: float) -> float:
    """The coupling density schedule ``delta^2 / (K t)``."""
    return delta * delta / (K * t)
