"""Two systems run in lock-step on shared instructions, with tracers.

Labels common to both systems read the same stream, so while they are alive in
both they sit at the same site.  A label alive in exactly one system is an
*extra*; each extra is followed by an active tracer of sign

    +1  for an extra A in the modified system or an extra B in the base one,
    -1  for the mirror cases,

and the difference of the two configurations equals the signed sum of active
tracer positions.  That identity is checked after every event.

In dragging mode tracers carry pre-sampled ``(W, T^A, T^B)`` and the tracked
particle forgets its own stream: it moves when the tracer's clock rings (every
ring for an A, marked rings for a B), along ``W``.
"""
from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field

import numpy as np

from .. import rng
from ..core import EventLog, MassLedger, SimParams, particle_arrays
from ..core.engine import KIND_ANNIH, KIND_JUMP
from .clocks import Stepper, TracerTriple, bounding_paths
from .entangle import EntangledPair, Quintuple
from .initial import CoupledInit, CouplingError


class IdentityViolation(CouplingError):
    """The difference identity or a tracer invariant failed at some event."""

    def __init__(self, message, event_index, t):
        super().__init__(f"event {event_index} (t={t!r}): {message}")
        self.event_index = event_index
        self.t = t


BASE, MOD = 0, 1
_SIGN_CHAR = {1: "+", -1: "-"}


@dataclass
class Tracer:
    origin: tuple  # (site index, i)
    sign: int
    active: bool = True
    tracked: tuple | None = None  # (label, system)
    times: list = field(default_factory=list)
    sites: list = field(default_factory=list)
    wander_time: float = np.inf
    triple: TracerTriple | None = None
    rings_used: list = field(default_factory=list)
    entangled: int = 0  # 1 or 2 when part of an entangled pair
    _n_active: int = 0
    _wander_rate: float = 0.0
    _wander_key: int = 0
    _stepper: Stepper | None = field(default=None, repr=False)
    _materialized: float = 0.0

    @property
    def position(self):
        return self.sites[-1]

    def _record(self, t, x):
        if x != self.sites[-1]:
            self.times.append(t)
            self.sites.append(x)

    def extend(self, t: float):
        """Materialize the wandering part of the path up to time ``t``."""
        if self.active or self.entangled or t <= self._materialized:
            return
        start = max(self.wander_time, self._materialized)
        if self.triple is not None:
            first = self.rings_used[-1] + 1 if self.rings_used else 0
            for k, s, _ in self.triple.clock.rings_until(t, first):
                if s <= self.wander_time:
                    continue
                self.rings_used.append(k)
                self.times.append(s)
                self.sites.append(self.triple.walk[len(self.rings_used)])
        else:
            stream = rng.Stream(self._wander_key, rng.WANDER, *self.origin)
            k = len(self.times) - self._n_active
            s = self.times[-1] if k > 0 else self.wander_time
            while True:
                s += stream.exponential(2 * k, self._wander_rate)
                if s > t:
                    break
                self.times.append(s)
                self.sites.append(self._stepper.step(self.sites[-1], stream.uniform(2 * k + 1)))
                k += 1
        self._materialized = max(t, start)

    def position_at(self, t: float):
        self.extend(t)
        return self.sites[int(np.searchsorted(self.times, t, side="right")) - 1]

    def hits(self, t: float) -> set:
        self.extend(t)
        k = int(np.searchsorted(self.times, t, side="right"))
        return set(self.sites[:k])

    def to_json(self, graph, t: float | None = None) -> str:
        if t is not None:
            self.extend(t)
        y, i = self.origin
        ev = [[float(s), _plain(graph.site(x))] for s, x in zip(self.times, self.sites)]
        return json.dumps({"tracer": [_plain(graph.site(y)), i], "sign": _SIGN_CHAR[self.sign],
                           "active": self.active,
                           "wander_time": None if np.isinf(self.wander_time) else self.wander_time,
                           "events": ev})


def _plain(x):
    if isinstance(x, tuple):
        return [_plain(v) for v in x]
    if isinstance(x, np.integer):
        return int(x)
    return x


@dataclass
class CoupledRun:
    init: CoupledInit
    params: SimParams
    mode: str
    logs: tuple
    tracers: list
    n_events: int
    n_checks: int
    ties: int
    pair: EntangledPair | None = None

    @property
    def base(self) -> EventLog:
        return self.logs[BASE]

    @property
    def modified(self) -> EventLog:
        return self.logs[MOD]

    def ledgers(self):
        return tuple(MassLedger.from_log(log) for log in self.logs)

    def active_tracers(self):
        return [tr for tr in self.tracers if tr.active]

    def bounding(self, tracer: Tracer, t: float | None = None):
        if tracer.triple is None:
            raise CouplingError("bounding walks need a dragging-mode tracer")
        t = self.params.t_max if t is None else t
        tracer.extend(t)
        return bounding_paths(tracer.triple, t, tracer.rings_used)

    def write_tracers(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for tr in self.tracers:
                fh.write(tr.to_json(self.init.graph, self.params.t_max) + "\n")


class _Lockstep:
    def __init__(self, init: CoupledInit, params: SimParams, seed: int, drag: bool,
                 check: bool, entangle):
        g = init.graph
        g._require_finite()
        self.g = g
        self.init = init
        self.params = params
        self.seed = rng.to_seed(seed)
        self.drag = drag
        self.check = check
        self.stepper = Stepper(g, indexed=True)
        self.t_max = float(params.t_max)
        self.rate = {1: float(params.D_A), -1: float(params.D_B)}
        n_sites = g.n_sites

        self.typ: dict = {}
        self.key: dict = {}
        self.brave: dict = {}
        self.njump: dict = {}
        self.pos = ({}, {})
        self.occ = ({}, {})
        self.cnt = (init.xi0.counts.copy(), init.xim0.counts.copy())
        self.pid = ({}, {})
        self.label_arrays = []
        for s, conf in enumerate((init.xi0, init.xim0)):
            site, j, typ = particle_arrays(conf.counts)
            self.label_arrays.append((site, j, typ))
            for p, (x, jj, ty) in enumerate(zip(site.tolist(), j.tolist(), typ.tolist())):
                lab = (x, jj)
                self.pid[s][lab] = p
                self.pos[s][lab] = x
                self.occ[s].setdefault(x, []).append(lab)
                if lab not in self.typ:
                    self.typ[lab] = ty
                    k = np.uint64(rng.stream_key(self.seed, rng.PARTICLE, x, jj, 0))
                    self.key[lab] = k
                    self.brave[lab] = rng.uniform(k, 0)
                    self.njump[lab] = 0
        self.death = tuple(np.full(len(self.pid[s]), np.inf) for s in (0, 1))
        self.events = ([], [])
        self.n_sites = n_sites

        self.tracers: list[Tracer] = []
        self.tracked_by: dict = {}
        self.dragged: set = set()
        self.heap: list = []
        self.n_events = 0
        self.n_checks = 0
        self.ties = 0
        self.last_t = -1.0

        self._init_tracers()
        self.pair = None
        if entangle is not None:
            self._init_entangled(*entangle)
        for lab in sorted(self.typ):
            if self._free(lab):
                self._schedule_own(lab, 0.0)
        if self.check:
            self._verify(0.0)

    # -- setup ------------------------------------------------------------

    def _init_tracers(self):
        init = self.init
        for sign, sites in ((1, init.plus), (-1, init.minus)):
            for y in sites.tolist():
                extras = []
                for s in (BASE, MOD):
                    for lab in self.occ[s].get(y, []):
                        if lab not in self.pos[1 - s]:
                            extras.append((lab, s))
                extras.sort()
                if len(extras) != init.K:
                    raise CouplingError(f"site {y}: expected {init.K} extras, found {len(extras)}")
                for i, (lab, s) in enumerate(extras, start=1):
                    if self._sign(lab, s) != sign:
                        raise CouplingError(f"site {y}: extra {lab} has the wrong sign")
                    tr = self._new_tracer((y, i), sign, y)
                    self._attach(tr, lab, s)
                    self.tracers.append(tr)
                    if self.drag:
                        self._schedule_ring(len(self.tracers) - 1, 0)

    def _new_tracer(self, origin, sign, y) -> Tracer:
        tr = Tracer(origin, sign, times=[0.0], sites=[y])
        tr._stepper = self.stepper
        tr._wander_rate = self.rate[1]
        tr._wander_key = int(self.seed)
        if self.drag:
            tr.triple = TracerTriple(self.stepper, y, origin[0], origin[1], self.seed,
                                     self.rate[1], self.rate[-1])
        return tr

    def _init_entangled(self, y, z):
        if not self.drag:
            raise CouplingError("entangled tracers need dragging mode")
        g = self.g
        yi, zi = g.index(y), g.index(z)
        ident = yi * self.n_sites + zi
        q = Quintuple(self.stepper, yi, zi, self.rate[1], self.rate[-1], self.seed, ident)
        self.pair = EntangledPair(q)
        for c, x in ((1, yi), (2, zi)):
            tr = next((tr for tr in self.tracers if tr.origin == (x, 1)), None)
            if tr is None:
                tr = Tracer((x, 1), 1, active=False, times=[0.0], sites=[x], wander_time=0.0)
                self.tracers.append(tr)
            tr.entangled = c
            tr.triple = None
        # the pair's clocks replace the tracers' own clocks
        self.heap = [e for e in self.heap
                     if not (e[1] == 1 and self.tracers[e[2]].entangled)]
        heapq.heapify(self.heap)
        for idx, tr in enumerate(self.tracers):
            if tr.entangled:
                self._schedule_ring(idx, 0)

    # -- helpers ----------------------------------------------------------

    def _sign(self, lab, s):
        return self.typ[lab] * (1 if s == MOD else -1)

    def _free(self, lab):
        """Alive in some system where it follows its own stream."""
        return any(lab in self.pos[s] and (lab, s) not in self.dragged for s in (0, 1))

    def _attach(self, tr: Tracer, lab, s):
        tr.tracked = (lab, s)
        self.tracked_by[(lab, s)] = tr
        if self.drag:
            self.dragged.add((lab, s))

    def _schedule_own(self, lab, t):
        rate = self.rate[self.typ[lab]]
        if rate <= 0:
            return
        k = self.njump[lab]
        counter = 1 if k == 0 else 2 * k + 1
        x, j = lab
        heapq.heappush(self.heap, (t + rng.exponential(self.key[lab], counter, rate), 0, x, j))

    def _schedule_ring(self, idx, k):
        tr = self.tracers[idx]
        if tr.entangled:
            s, _ = self.pair.next_ring(tr.entangled, k)
        else:
            s, _ = tr.triple.clock.ring(k)
        heapq.heappush(self.heap, (s, 1, idx, k))

    # -- moves ------------------------------------------------------------

    def _move(self, s, lab, w, t):
        """Move ``lab`` to ``w`` in system ``s``; returns the killed resident or None."""
        u = self.pos[s][lab]
        occ = self.occ[s]
        occ[u].remove(lab)
        ty = self.typ[lab]
        self.cnt[s][u] -= ty
        here = occ.get(w)
        if here and self.typ[here[0]] != ty:
            q = max(here, key=self.brave.__getitem__)
            here.remove(q)
            self.cnt[s][w] -= self.typ[q]
            del self.pos[s][lab]
            del self.pos[s][q]
            self.death[s][self.pid[s][lab]] = t
            self.death[s][self.pid[s][q]] = t
            self.events[s].append((t, KIND_ANNIH, self.pid[s][lab], self.pid[s][q], u, w))
            return q
        occ.setdefault(w, []).append(lab)
        self.cnt[s][w] += ty
        self.pos[s][lab] = w
        self.events[s].append((t, KIND_JUMP, self.pid[s][lab], -1, u, w))
        return None

    def _own_jump(self, t, lab):
        systems = [s for s in (0, 1) if lab in self.pos[s] and (lab, s) not in self.dragged]
        if not systems:
            return False
        u = self.pos[systems[0]][lab]
        k = self.njump[lab]
        e = rng.step_index(self.stepper._cum, self.stepper._indptr[u],
                           self.stepper._indptr[u + 1], rng.uniform(self.key[lab], 2 * k + 2))
        w = int(self.stepper._dest[e])
        self.njump[lab] = k + 1
        killed = []
        for s in systems:
            q = self._move(s, lab, w, t)
            if q is not None:
                killed += [(lab, s), (q, s)]
        if self._free(lab):
            heapq.heappush(self.heap, (t + rng.exponential(self.key[lab], 2 * k + 3,
                                                           self.rate[self.typ[lab]]),
                                       0, lab[0], lab[1]))
        for s in systems:
            tr = self.tracked_by.get((lab, s))
            if tr is not None:
                tr._record(t, w)
        self._resolve(t, w, killed)
        return True

    def _ring(self, t, idx, k):
        tr = self.tracers[idx]
        if tr.entangled:
            _, mark = self.pair.next_ring(tr.entangled, k)
            self.pair.note_ring(t)
        else:
            _, mark = tr.triple.clock.ring(k)
        if tr.active or tr.entangled:
            self._schedule_ring(idx, k + 1)
        if tr.active:
            lab, s = tr.tracked
            if self.typ[lab] < 0 and not mark:
                return False
        elif not tr.entangled:
            return False
        if tr.entangled:
            w = self.pair.move(tr.entangled, t)
        else:
            tr.rings_used.append(k)
            w = tr.triple.walk[len(tr.rings_used)]
        if not tr.active:
            tr.times.append(t)
            tr.sites.append(w)
            return True
        killed = []
        q = self._move(s, lab, w, t)
        if q is not None:
            killed += [(lab, s), (q, s)]
        tr.times.append(t)
        tr.sites.append(w)
        self._resolve(t, w, killed)
        return True

    # -- successor rule -----------------------------------------------------

    def _resolve(self, t, w, killed):
        dead = [self.tracked_by.pop(key) for key in killed if key in self.tracked_by]
        for key in killed:
            self.dragged.discard(key)
        fresh = []
        for s in (0, 1):
            for lab in self.occ[s].get(w, ()):
                if lab not in self.pos[1 - s] and (lab, s) not in self.tracked_by:
                    fresh.append((lab, s))
        if not dead and not fresh:
            return
        leftovers = {1: [], -1: []}
        for sigma in (1, -1):
            ds = sorted((tr for tr in dead if tr.sign == sigma),
                        key=lambda tr: -self.brave[tr.tracked[0]])
            ns = sorted((e for e in fresh if self._sign(*e) == sigma),
                        key=lambda e: -self.brave[e[0]])
            for tr, (lab, s) in zip(ds, ns):
                self._attach(tr, lab, s)
                if not self.drag and tr.position != w:
                    tr._record(t, w)
            if len(ns) > len(ds):
                raise IdentityViolation(f"extra {ns[len(ds)]} at site {w} has no tracer",
                                        self.n_events, t)
            leftovers[sigma] = ds[len(ns):]
        if len(leftovers[1]) != len(leftovers[-1]):
            raise IdentityViolation(
                f"{len(leftovers[1])} (+) and {len(leftovers[-1])} (-) tracers lost their "
                f"particles at site {w}; they cannot cancel", self.n_events, t)
        for tr in leftovers[1] + leftovers[-1]:
            tr.active = False
            tr.tracked = None
            tr.wander_time = t
            tr._materialized = t
            tr._n_active = len(tr.times)

    # -- invariants -----------------------------------------------------------

    def _verify(self, t):
        self.n_checks += 1
        diff = self.cnt[MOD] - self.cnt[BASE]
        tr_sum = np.zeros_like(diff)
        for tr in self.tracers:
            if not tr.active:
                continue
            lab, s = tr.tracked
            x = tr.position
            if self.pos[s].get(lab) != x:
                raise IdentityViolation(f"tracer {tr.origin} is not on its particle",
                                        self.n_events, t)
            if lab in self.pos[1 - s]:
                raise IdentityViolation(f"tracer {tr.origin} tracks a non-extra particle",
                                        self.n_events, t)
            if self._sign(lab, s) != tr.sign:
                raise IdentityViolation(f"tracer {tr.origin} tracks an extra of the wrong sign",
                                        self.n_events, t)
            if self.cnt[BASE][x] == 0 and self.cnt[MOD][x] == 0:
                raise IdentityViolation(f"active tracer {tr.origin} at an empty site",
                                        self.n_events, t)
            tr_sum[x] += tr.sign
        if not np.array_equal(diff, tr_sum):
            bad = np.flatnonzero(diff != tr_sum)
            raise IdentityViolation(
                f"difference identity fails at sites {bad[:5].tolist()}", self.n_events, t)
        for s in (0, 1):
            c = self.cnt[s]
            for x, labs in self.occ[s].items():
                if labs and abs(c[x]) != len(labs):
                    raise IdentityViolation("occupancy bookkeeping out of sync",
                                            self.n_events, t)

    # -- main loop ----------------------------------------------------------

    def run(self):
        heap = self.heap
        while heap:
            t, kind, a, b = heap[0]
            if t > self.t_max:
                break
            heapq.heappop(heap)
            if kind == 0:
                lab = (a, b)
                if not self._free(lab):
                    continue
                did = self._own_jump(t, lab)
            else:
                did = self._ring(t, a, b)
            if did:
                if t == self.last_t:
                    self.ties += 1
                self.last_t = t
                self.n_events += 1
                if self.check:
                    self._verify(t)
        return self

    def result(self, mode) -> CoupledRun:
        logs = []
        for s in (0, 1):
            site, j, typ = self.label_arrays[s]
            ev = self.events[s]
            cols = list(zip(*ev)) if ev else [()] * 6
            logs.append(EventLog(
                self.g, self.t_max, site, j, typ,
                np.array(cols[0], dtype=np.float64), np.array(cols[1], dtype=np.int8),
                np.array(cols[2], dtype=np.int64), np.array(cols[3], dtype=np.int64),
                np.array(cols[4], dtype=np.int64), np.array(cols[5], dtype=np.int64),
                self.death[s], self.ties,
                np.array([self.brave[(x, jj)] for x, jj in zip(site.tolist(), j.tolist())])))
        return CoupledRun(self.init, self.params, mode, tuple(logs), self.tracers,
                          self.n_events, self.n_checks, self.ties, self.pair)


def evolve_coupled_equal(graph, init: CoupledInit, params: SimParams, seed: int,
                         check: bool = True) -> CoupledRun:
    """Both systems on shared instructions; tracers follow their particles' own walks."""
    if init.graph != graph:
        raise CouplingError("coupled initial condition belongs to a different graph")
    if params.D_A != params.D_B:
        raise CouplingError("evolve_coupled_equal needs D_A == D_B; "
                            "use evolve_coupled_general for unequal rates")
    return _Lockstep(init, params, seed, drag=False, check=check, entangle=None).run().result("equal")


def evolve_coupled_general(graph, init: CoupledInit, params: SimParams, seed: int,
                           check: bool = True, entangle=None) -> CoupledRun:
    """Dragging coupling for ``D_A >= D_B``.

    ``entangle=(y, z)`` replaces the walks of tracers ``(y, 1)`` and ``(z, 1)``
    by an entangled pair.
    """
    if init.graph != graph:
        raise CouplingError("coupled initial condition belongs to a different graph")
    if params.D_A < params.D_B:
        raise CouplingError("the dragging coupling needs D_A >= D_B (swap the types otherwise)")
    return _Lockstep(init, params, seed, drag=True, check=check,
                     entangle=entangle).run().result("general")


def wandering_tracer(graph, seed: int, y, i: int = 1, rate: float = 1.0) -> Tracer:
    """A tracer that wanders from time 0 (equal-rate mode)."""
    stepper = Stepper(graph, indexed=True)
    yi = graph.index(y)
    tr = Tracer((yi, i), 1, active=False, times=[0.0], sites=[yi], wander_time=0.0)
    tr._stepper = stepper
    tr._wander_rate = float(rate)
    tr._wander_key = int(rng.to_seed(seed))
    tr._n_active = 1
    return tr
