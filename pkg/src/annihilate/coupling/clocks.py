"""Pre-sampled tracer randomness: a discrete path plus a thinned Poisson clock.

A ring of the rate-``D_A`` clock is marked "also B" with probability
``D_B / D_A``; marked rings form the B-clock, so the B-clock is a subset of the
A-clock by construction.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import rng


class Stepper:
    """Kernel steps driven by a supplied uniform.

    On finite graphs positions are site indices (fast path through the CSR
    table); on infinite graphs they are site objects.
    """

    def __init__(self, graph, indexed: bool | None = None):
        self.graph = graph
        self.indexed = graph.finite if indexed is None else indexed
        if self.indexed:
            tab = graph.transition_table()
            self._indptr, self._dest, self._cum = tab.indptr, tab.dest, tab.cum

    def step(self, x, u: float):
        if self.indexed:
            e = rng.step_index(self._cum, self._indptr[x], self._indptr[x + 1], u)
            return int(self._dest[e])
        return self.graph.sample_step(x, u)

    def distance(self, x, y) -> int:
        if self.indexed:
            g = self.graph
            return g.distance(g.site(x), g.site(y))
        return self.graph.distance(x, y)

    def site(self, x):
        return self.graph.site(x) if self.indexed else x


class TracerClock:
    """Rings of a rate-``D_A`` clock; ring ``k`` uses counters ``2k`` and ``2k+1``."""

    def __init__(self, stream: rng.Stream, D_A: float, D_B: float):
        if D_A <= 0 or not 0 <= D_B <= D_A:
            raise ValueError("tracer clocks need D_A > 0 and 0 <= D_B <= D_A")
        self.stream = stream
        self.D_A = float(D_A)
        self.thin = float(D_B) / float(D_A)
        self._times: list[float] = []
        self._marks: list[bool] = []

    def ring(self, k: int) -> tuple[float, bool]:
        while len(self._times) <= k:
            i = len(self._times)
            prev = self._times[-1] if i else 0.0
            self._times.append(prev + self.stream.exponential(2 * i, self.D_A))
            self._marks.append(self.stream.uniform(2 * i + 1) < self.thin)
        return self._times[k], self._marks[k]

    def rings_until(self, t: float, start: int = 0):
        """Yield ``(k, time, marked)`` for rings ``k >= start`` with time ``<= t``."""
        k = start
        while True:
            s, mark = self.ring(k)
            if s > t:
                return
            yield k, s, mark
            k += 1


class DiscretePath:
    """Lazily extended kernel path ``W_0, W_1, ...``; step ``n`` uses counter ``n``."""

    def __init__(self, stepper: Stepper, stream: rng.Stream, start):
        self.stepper = stepper
        self.stream = stream
        self._w = [start]

    def __getitem__(self, n: int):
        while len(self._w) <= n:
            i = len(self._w) - 1
            self._w.append(self.stepper.step(self._w[-1], self.stream.uniform(i)))
        return self._w[n]

    def prefix(self, n: int) -> list:
        self[n]
        return self._w[:n + 1]


@dataclass
class TracerTriple:
    """``(W, T^A, T^B)`` for tracer ``(y, i)``; ``ident`` keys the streams."""

    stepper: Stepper
    start: object
    ident: int
    i: int
    seed: int
    D_A: float
    D_B: float
    walk: DiscretePath = field(init=False)
    clock: TracerClock = field(init=False)

    def __post_init__(self):
        seed = rng.to_seed(self.seed)
        self.walk = DiscretePath(self.stepper, rng.Stream(seed, rng.TRACER_WALK, self.ident, self.i),
                                 self.start)
        self.clock = TracerClock(rng.Stream(seed, rng.TRACER_CLOCK, self.ident, self.i),
                                 self.D_A, self.D_B)

    def follow(self, rings) -> tuple[list[float], list]:
        """Path that steps along ``W`` exactly at the given ring indices."""
        times, sites = [0.0], [self.start]
        for n, k in enumerate(rings, start=1):
            times.append(self.clock.ring(k)[0])
            sites.append(self.walk[n])
        return times, sites

    def listen(self, t: float, clock: str) -> list[int]:
        """Ring indices up to ``t`` on the A-clock (all rings) or the B-clock (marked)."""
        if clock == "A":
            return [k for k, _, _ in self.clock.rings_until(t)]
        if clock == "B":
            return [k for k, _, mark in self.clock.rings_until(t) if mark]
        raise ValueError("clock must be 'A' or 'B'")


def hit_set(times, sites, t: float) -> set:
    """Sites visited by the path during ``[0, t]``."""
    k = int(np.searchsorted(np.asarray(times), t, side="right"))
    return set(sites[:k])


@dataclass
class BoundingWalks:
    t: float
    minus: tuple[list, list]
    plus: tuple[list, list]
    tracer: tuple[list, list] | None = None

    def hits(self, which: str, t: float | None = None) -> set:
        times, sites = getattr(self, which)
        return hit_set(times, sites, self.t if t is None else t)

    def sandwich_holds(self, t: float | None = None) -> bool:
        lo, hi = self.hits("minus", t), self.hits("plus", t)
        if not lo <= hi:
            return False
        if self.tracer is None:
            return True
        mid = self.hits("tracer", t)
        return lo <= mid <= hi


def bounding_paths(triple: TracerTriple, t: float, tracer_rings=None) -> BoundingWalks:
    """``X_-`` (B-clock) and ``X_+`` (A-clock) along the triple's ``W`` up to ``t``.

    ``tracer_rings`` (ring indices the tracer actually used) adds the tracer's
    own path for the sandwich check.
    """
    minus = triple.follow(triple.listen(t, "B"))
    plus = triple.follow(triple.listen(t, "A"))
    mid = None
    if tracer_rings is not None:
        mid = triple.follow([k for k in tracer_rings if triple.clock.ring(k)[0] <= t])
    return BoundingWalks(t, minus, plus, mid)
