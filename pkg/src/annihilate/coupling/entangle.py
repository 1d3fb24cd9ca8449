"""Two tracers driven by one discrete walk ``Z`` and a switch sequence.

Whenever the mover changes, the current image of ``Z`` and the resting anchor
are swapped by a graph automorphism, so the mover picks up where the other
tracer rests.  The mutual distance is then always ``d(Z_n, z)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import rng
from .clocks import DiscretePath, Stepper, TracerClock, hit_set


class EntanglementError(RuntimeError):
    pass


class EntangledWalk:
    """Incremental form of the construction, one step at a time.

    ``mover`` is the image of the current ``Z`` point under all reflections so
    far and ``anchor`` the image of ``z``.
    """

    def __init__(self, graph, y, z, stepper: Stepper | None = None):
        self.graph = graph
        self.stepper = stepper
        self.mover = y
        self.anchor = z
        self.last = 1
        self.reflections: list = []
        self.switches: list[int] = []
        self.n = 0

    def _swap(self, a, b):
        if self.stepper is not None and self.stepper.indexed:
            g = self.graph
            pi = g.swap_automorphism(g.site(a), g.site(b))
            return lambda v: g.index(pi(g.site(v)))
        return self.graph.swap_automorphism(a, b)

    def image(self, v):
        for pi in self.reflections:
            v = pi(v)
        return v

    def step(self, z_next, label: int):
        """Advance with ``Z_{n+1} = z_next`` and mover ``label``; returns ``(W^y, W^z)``."""
        if label not in (1, 2):
            raise EntanglementError(f"switch labels are 1 or 2, got {label!r}")
        self.n += 1
        if label != self.last:
            pi = self._swap(self.mover, self.anchor)
            self.reflections.append(pi)
            self.switches.append(self.n)
            self.anchor = pi(self.anchor)
            self.last = label
        self.mover = self.image(z_next)
        return self.positions()

    def positions(self):
        if self.last == 1:
            return self.mover, self.anchor
        return self.anchor, self.mover


def _normalize_switches(ell, n_steps):
    ell = [int(v) for v in ell]
    if len(ell) == n_steps + 1:
        ell = ell[1:]  # leading entry is the l_0 slot, which is always 1
    if len(ell) != n_steps:
        raise EntanglementError(
            f"switch sequence has length {len(ell)}; expected {n_steps} (or {n_steps + 1})")
    return ell


def entangle_discrete(graph, Z, z, ell):
    """Paths ``(W^y, W^z)`` built from the discrete path ``Z`` (with ``Z[0] = y``)."""
    Z = list(Z)
    ell = _normalize_switches(ell, len(Z) - 1)
    walk = EntangledWalk(graph, Z[0], z)
    wy, wz = [Z[0]], [z]
    for v, lab in zip(Z[1:], ell):
        a, b = walk.step(v, lab)
        wy.append(a)
        wz.append(b)
    return wy, wz


@dataclass
class StepTrace:
    n: int
    label: int
    switched: bool
    Z: object
    image: object
    anchor: object
    Wy: object
    Wz: object
    distance: int


def entangle_trace(graph, Z, z, ell) -> list[StepTrace]:
    """Step-by-step record of the construction (for plotting)."""
    Z = list(Z)
    ell = _normalize_switches(ell, len(Z) - 1)
    walk = EntangledWalk(graph, Z[0], z)
    rows = [StepTrace(0, 1, False, Z[0], Z[0], z, Z[0], z, graph.distance(Z[0], z))]
    for n, (v, lab) in enumerate(zip(Z[1:], ell), start=1):
        switched = lab != walk.last
        a, b = walk.step(v, lab)
        rows.append(StepTrace(n, lab, switched, v, walk.mover, walk.anchor, a, b,
                              graph.distance(a, b)))
    return rows


# ---------------------------------------------------------------------------
# continuous time


@dataclass
class Quintuple:
    """``(Z, T^A_y, T^B_y, T^A_z, T^B_z)``; ``ident`` keys the streams."""

    stepper: Stepper
    y: object
    z: object
    D_A: float
    D_B: float
    seed: int
    ident: int = 0
    Z: DiscretePath = field(init=False)
    clocks: tuple = field(init=False)

    def __post_init__(self):
        seed = rng.to_seed(self.seed)
        self.Z = DiscretePath(self.stepper, rng.Stream(seed, rng.ENTANGLE_WALK, self.ident, 0),
                              self.y)
        self.clocks = tuple(TracerClock(rng.Stream(seed, rng.ENTANGLE_CLOCK, self.ident, c),
                                        self.D_A, self.D_B) for c in (1, 2))


class EntangledPair:
    """Continuous-time entangled tracers ``X^y`` (label 1) and ``X^z`` (label 2).

    Each tracer listens to its own A-clock, or only to the marked rings while
    it drags a B-particle.  ``Y_+`` follows ``Z`` on every ring of both clocks.
    """

    def __init__(self, quintuple: Quintuple):
        self.q = quintuple
        st = quintuple.stepper
        self.walk = EntangledWalk(st.graph, quintuple.y, quintuple.z, st)
        self.times = [0.0]
        self.labels: list[int] = []
        self.path = {1: ([0.0], [quintuple.y]), 2: ([0.0], [quintuple.z])}
        self.all_rings = [0.0]  # times of the union clock, for Y_+
        self.violations: list[str] = []

    def next_ring(self, c: int, k: int):
        return self.q.clocks[c - 1].ring(k)

    def note_ring(self, t: float):
        self.all_rings.append(t)

    def move(self, c: int, t: float):
        """Tracer ``c`` jumps at time ``t``; returns its new position."""
        before = self.walk.positions()
        n = self.walk.n + 1
        wy, wz = self.walk.step(self.q.Z[n], c)
        after = (wy, wz)
        rest = 1 - (c - 1)
        if after[rest] != before[rest]:
            self.violations.append(f"step {n}: the resting tracer moved")
        st = self.q.stepper
        if st.distance(wy, wz) != st.distance(self.q.Z[n], self.q.z):
            self.violations.append(f"step {n}: distance invariant broken")
        self.times.append(t)
        self.labels.append(c)
        times, sites = self.path[c]
        times.append(t)
        sites.append(after[c - 1])
        return after[c - 1]

    def Y(self):
        """Times and sites of ``Y = Z_{n(t)}``."""
        return self.times, self.q.Z.prefix(len(self.times) - 1)

    def Y_plus(self):
        return self.all_rings, self.q.Z.prefix(len(self.all_rings) - 1)

    def containment_holds(self, t: float) -> bool:
        return hit_set(*self.Y(), t) <= hit_set(*self.Y_plus(), t)

    def distance_at(self, t: float) -> int:
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.q.stepper.distance(self.q.Z[k], self.q.z)


@dataclass
class EntangledRun:
    pair: EntangledPair
    t_max: float

    @property
    def violations(self):
        return self.pair.violations

    @property
    def ok(self):
        return not self.pair.violations and self.pair.containment_holds(self.t_max)

    def position(self, c: int, t: float):
        times, sites = self.pair.path[c]
        return sites[int(np.searchsorted(times, t, side="right")) - 1]

    def distance(self, t: float) -> int:
        st = self.pair.q.stepper
        return st.distance(self.position(1, t), self.position(2, t))


def entangle_continuous(graph, quintuple: Quintuple, t_max: float, listen=None) -> EntangledRun:
    """Run the pair on its own clocks up to ``t_max``.

    ``listen(c, t)`` returns the type ("A" or "B") tracer ``c`` drags at ring
    time ``t``; by default both wander on their A-clocks.
    """
    pair = EntangledPair(quintuple)
    k = [0, 0]
    nxt = [pair.next_ring(1, 0), pair.next_ring(2, 0)]
    while True:
        c = 1 if nxt[0][0] <= nxt[1][0] else 2
        t, mark = nxt[c - 1]
        if t > t_max:
            break
        pair.note_ring(t)
        kind = "A" if listen is None else listen(c, t)
        if kind == "A" or mark:
            pair.move(c, t)
        k[c - 1] += 1
        nxt[c - 1] = pair.next_ring(c, k[c - 1])
    return EntangledRun(pair, t_max)
