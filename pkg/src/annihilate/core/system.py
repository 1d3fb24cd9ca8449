from __future__ import annotations

import csv
import gzip
import io
import json
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Iterator, NamedTuple, Sequence

import numpy as np

from .. import rng
from ..graph import ReflectiveGraph
from . import engine


class SimulationError(ValueError):
    pass


# ---------------------------------------------------------------------------
# parameters and configurations


def parse_nu(nu) -> tuple[tuple[int, float], ...]:
    """Accept ``{value: prob}``, pairs, or ``"+1:0.25,-1:0.25,0:0.5"``."""
    if isinstance(nu, str):
        pairs = []
        for part in filter(None, nu.split(",")):
            v, _, p = part.partition(":")
            pairs.append((int(v), float(p)))
    elif isinstance(nu, dict):
        pairs = [(int(v), float(p)) for v, p in nu.items()]
    else:
        pairs = [(int(v), float(p)) for v, p in nu]
    merged: dict[int, float] = {}
    for v, p in pairs:
        merged[v] = merged.get(v, 0.0) + p
    out = tuple(sorted(merged.items()))
    if any(p < 0 for _, p in out):
        raise SimulationError("nu has a negative probability")
    if abs(sum(p for _, p in out) - 1.0) > 1e-12:
        raise SimulationError(f"nu probabilities sum to {sum(p for _, p in out)}, not 1")
    return out


def format_nu(nu) -> str:
    return ",".join(f"{v:+d}:{p!r}" for v, p in nu)


@dataclass(frozen=True)
class SimParams:
    D_A: float
    D_B: float
    nu: tuple = ((0, 1.0),)
    t_max: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "nu", parse_nu(self.nu))
        if self.D_A < 0 or self.D_B < 0:
            raise SimulationError("jump rates must be nonnegative")
        if max(self.D_A, self.D_B) <= 0:
            raise SimulationError("D_A and D_B cannot both be zero; one of them must be positive")
        if not self.t_max > 0:
            raise SimulationError("t_max must be positive")

    def nu_prob(self, v: int) -> float:
        return dict(self.nu).get(v, 0.0)

    @property
    def mean_a(self):
        return sum(max(v, 0) * p for v, p in self.nu)

    @property
    def mean_b(self):
        return sum(max(-v, 0) * p for v, p in self.nu)


@dataclass
class Configuration:
    """Signed occupancy per site index: ``counts[i] > 0`` is that many A's."""

    graph: ReflectiveGraph
    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if len(self.counts) != self.graph.n_sites:
            raise SimulationError("configuration length does not match the graph")

    @property
    def n_a(self) -> int:
        return int(self.counts[self.counts > 0].sum())

    @property
    def n_b(self) -> int:
        return int(-self.counts[self.counts < 0].sum())

    def __getitem__(self, site):
        return int(self.counts[self.graph.index(site)])

    def copy(self):
        return Configuration(self.graph, self.counts.copy())

    def __eq__(self, other):
        return (isinstance(other, Configuration) and other.graph == self.graph
                and np.array_equal(self.counts, other.counts))

    def labels(self):
        """Labels ``(site_index, j)`` in canonical order."""
        site, j, _ = particle_arrays(self.counts)
        return list(zip(site.tolist(), j.tolist()))

    @classmethod
    def from_sites(cls, graph, occupancy: dict):
        counts = np.zeros(graph.n_sites, dtype=np.int64)
        for s, c in occupancy.items():
            counts[graph.index(s)] = c
        return cls(graph, counts)


def particle_arrays(counts):
    """Site, label index ``j`` and type of every particle, sorted by ``(site, j)``."""
    counts = np.asarray(counts, dtype=np.int64)
    mult = np.abs(counts)
    site = np.repeat(np.arange(len(counts), dtype=np.int64), mult)
    start = np.cumsum(mult) - mult
    rank = np.arange(len(site), dtype=np.int64) - np.repeat(start, mult) + 1
    sign = np.sign(counts[site])
    j = rank * sign
    # within a site B labels run -k..-1, so ascending j order is -k first
    order = np.lexsort((j, site))
    return site[order], j[order], sign[order].astype(np.int64)


def sample_initial(graph: ReflectiveGraph, nu, seed: int) -> Configuration:
    """i.i.d. field with marginal ``nu``; site ``x`` uses its own keyed draw."""
    graph._require_finite()
    nu = parse_nu(nu)
    values = np.array([v for v, _ in nu], dtype=np.int64)
    cdf = np.cumsum([p for _, p in nu])
    cdf[-1] = 1.0
    u = rng.site_uniforms(rng.to_seed(seed), rng.INITIAL, graph.n_sites, 0)
    return Configuration(graph, values[np.searchsorted(cdf, u, side="right")])


def truncate(xi0: Configuration, center, radius: int) -> Configuration:
    """Keep particles within ``radius`` of ``center``; empty every other site."""
    if radius < 0:
        raise SimulationError("radius must be nonnegative")
    dist = xi0.graph.distances_from(center)
    return Configuration(xi0.graph, np.where(dist <= radius, xi0.counts, 0))


# ---------------------------------------------------------------------------
# events and ledgers


class Jump(NamedTuple):
    t: float
    label: tuple
    src: object
    dst: object


class Annihilation(NamedTuple):
    t: float
    label_a: tuple
    label_b: tuple
    site: object
    jumper: tuple
    src: object


def _jsonable(x):
    if isinstance(x, tuple):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    return x


def _open_text(path, mode):
    path = str(path)
    if path.endswith(".gz"):
        return io.TextIOWrapper(gzip.open(path, mode + "b"), encoding="utf-8", newline="")
    return open(path, mode, encoding="utf-8", newline="")


@dataclass
class EventLog:
    """Totally ordered record of one run, stored as parallel arrays.

    Labels refer to site *objects* of ``graph`` in the public API; the arrays
    keep site indices and particle ids.
    """

    graph: ReflectiveGraph
    t_max: float
    label_site: np.ndarray
    label_j: np.ndarray
    label_type: np.ndarray
    t: np.ndarray
    kind: np.ndarray
    p: np.ndarray
    q: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    death: np.ndarray
    ties: int = 0
    brave: np.ndarray | None = field(default=None, repr=False)
    _pid: dict = field(default=None, repr=False)

    def __len__(self):
        return len(self.t)

    def label(self, pid) -> tuple:
        return (self.graph.site(int(self.label_site[pid])), int(self.label_j[pid]))

    def pid(self, label) -> int | None:
        if self._pid is None:
            self._pid = {(int(s), int(j)): i for i, (s, j)
                         in enumerate(zip(self.label_site, self.label_j))}
        site, j = label
        return self._pid.get((self.graph.index(site), int(j)))

    def event(self, i):
        g = self.graph
        t = float(self.t[i])
        p = int(self.p[i])
        if self.kind[i] == engine.KIND_JUMP:
            return Jump(t, self.label(p), g.site(int(self.src[i])), g.site(int(self.dst[i])))
        q = int(self.q[i])
        a, b = (p, q) if self.label_type[p] > 0 else (q, p)
        return Annihilation(t, self.label(a), self.label(b), g.site(int(self.dst[i])),
                            self.label(p), g.site(int(self.src[i])))

    def __iter__(self) -> Iterator[Jump | Annihilation]:
        for i in range(len(self)):
            yield self.event(i)

    @property
    def n_annihilations(self) -> int:
        return int(np.count_nonzero(self.kind == engine.KIND_ANNIH))

    def theta(self, t: float) -> float:
        """Annihilations per site by time ``t``."""
        k = np.searchsorted(self.t, t, side="right")
        return int(np.count_nonzero(self.kind[:k] == engine.KIND_ANNIH)) / self.graph.n_sites

    def annihilation_time(self, label) -> float:
        """Annihilation time of ``label``; 0 if absent at t=0, inf if alive at t_max."""
        pid = self.pid(label)
        if pid is None:
            return 0.0
        return float(self.death[pid])

    def censored(self, label) -> bool:
        pid = self.pid(label)
        return pid is not None and not np.isfinite(self.death[pid])

    def identical(self, other: "EventLog") -> bool:
        names = ("label_site", "label_j", "t", "kind", "p", "q", "src", "dst", "death")
        return all(np.array_equal(getattr(self, n), getattr(other, n)) for n in names)

    def to_jsonl(self, path):
        with _open_text(path, "w") as fh:
            for ev in self:
                if isinstance(ev, Jump):
                    rec = {"t": ev.t, "kind": "jump", "label": _jsonable(ev.label),
                           "from": _jsonable(ev.src), "to": _jsonable(ev.dst)}
                else:
                    rec = {"t": ev.t, "kind": "annih", "a": _jsonable(ev.label_a),
                           "b": _jsonable(ev.label_b), "site": _jsonable(ev.site),
                           "jumper": _jsonable(ev.jumper), "from": _jsonable(ev.src)}
                fh.write(json.dumps(rec) + "\n")


def read_jsonl(path) -> list[dict]:
    with _open_text(path, "r") as fh:
        return [json.loads(line) for line in fh if line.strip()]


@dataclass
class MassLedger:
    """Piecewise-constant particle counts; one row at t=0 and per annihilation."""

    n_sites: int
    t: np.ndarray
    n_a: np.ndarray
    n_b: np.ndarray
    annihilations: np.ndarray

    @classmethod
    def from_log(cls, log: EventLog):
        n_a0 = int(np.count_nonzero(log.label_type > 0))
        n_b0 = len(log.label_type) - n_a0
        ann_t = log.t[log.kind == engine.KIND_ANNIH]
        k = np.arange(len(ann_t) + 1)
        return cls(log.graph.n_sites, np.concatenate([[0.0], ann_t]), n_a0 - k, n_b0 - k, k)

    def at(self, t: float) -> tuple[int, int, int]:
        i = np.searchsorted(self.t, t, side="right") - 1
        return int(self.n_a[i]), int(self.n_b[i]), int(self.annihilations[i])

    @property
    def mu_a(self):
        return self.n_a / self.n_sites

    @property
    def mu_b(self):
        return self.n_b / self.n_sites

    @property
    def rho(self):
        return (self.n_a + self.n_b) / self.n_sites

    def to_csv(self, path):
        with _open_text(path, "w") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "nA", "nB", "annihilations"])
            for row in zip(self.t.tolist(), self.n_a.tolist(), self.n_b.tolist(),
                           self.annihilations.tolist()):
                w.writerow(row)


# ---------------------------------------------------------------------------
# runs


@dataclass(frozen=True)
class SystemSpec:
    """Everything that determines a run: graph, initial condition, instructions.

    ``salts`` maps label ``(site, j)`` to a stream salt; ``deleted`` removes
    labels from the initial condition without renumbering the rest.
    """

    graph: ReflectiveGraph
    xi0: Configuration
    params: SimParams
    seed: int
    salts: tuple = ()
    deleted: frozenset = frozenset()

    def salt_of(self, label):
        return dict(self.salts).get(label, 0)


@dataclass
class RawRun:
    """Engine output for one run (arrays keyed by pid)."""

    label_site: np.ndarray
    label_j: np.ndarray
    label_type: np.ndarray
    events: tuple
    chk_a: np.ndarray
    chk_b: np.ndarray
    chk_ann: np.ndarray
    ladder_visits: np.ndarray
    death: np.ndarray
    final_pos: np.ndarray
    alive: np.ndarray
    brave: np.ndarray
    first_wrap: float
    ties: int
    n_jumps: int


_EMPTY = np.empty(0)


def run_raw(spec: SystemSpec, *, record=True, checkpoints=_EMPTY, watch=None,
            ladder=_EMPTY) -> RawRun:
    g = spec.graph
    if not g.finite:
        raise SimulationError("evolve needs a finite graph")
    tab = g.transition_table()
    site, j, typ = particle_arrays(spec.xi0.counts)
    salt = np.zeros(len(site), dtype=np.uint64)
    if spec.salts or spec.deleted:
        keep = np.ones(len(site), dtype=bool)
        index = {(int(s), int(k)): i for i, (s, k) in enumerate(zip(site, j))}
        for (s, k), value in spec.salts:
            i = index.get((g.index(s), k))
            if i is None:
                raise SimulationError(f"label {(s, k)} is not present at t=0")
            salt[i] = rng.to_seed(value)
        for s, k in spec.deleted:
            i = index.get((g.index(s), k))
            if i is None:
                raise SimulationError(f"label {(s, k)} is not present at t=0")
            keep[i] = False
        site, j, typ, salt = site[keep], j[keep], typ[keep], salt[keep]
    out = engine.simulate(
        tab.indptr, tab.dest, tab.cum, tab.disp, tab.period, site, j, typ, salt,
        rng.to_seed(spec.seed), float(spec.params.D_A), float(spec.params.D_B),
        float(spec.params.t_max), np.asarray(checkpoints, dtype=np.float64),
        -1 if watch is None else g.index(watch), np.asarray(ladder, dtype=np.float64),
        record)
    return RawRun(site, j, typ, out[0:6], *out[6:])


def evolve(graph: ReflectiveGraph, xi0: Configuration, params: SimParams, seed: int,
           observers: Iterable[Callable] = (), *, salts=(), deleted=frozenset()):
    """Exact realisation of the system; returns ``(EventLog, MassLedger)``.

    Observers are called with every event in time order after the run.
    """
    if xi0.graph != graph:
        raise SimulationError("configuration belongs to a different graph")
    spec = SystemSpec(graph, xi0, params, seed, tuple(salts), frozenset(deleted))
    return evolve_spec(spec, observers)


def evolve_spec(spec: SystemSpec, observers: Iterable[Callable] = ()):
    raw = run_raw(spec)
    log = EventLog(spec.graph, spec.params.t_max, raw.label_site, raw.label_j,
                   raw.label_type, *raw.events, raw.death, raw.ties, raw.brave)
    observers = list(observers)
    if observers:
        for ev in log:
            for obs in observers:
                obs(ev)
    return log, MassLedger.from_log(log)


def annihilation_time(log: EventLog, label) -> float:
    return log.annihilation_time(label)


def resample_particle(spec: SystemSpec, label, salt: int) -> SystemSpec:
    """Same system except that ``label`` draws its instructions under ``salt``."""
    s, j = label
    if not spec.graph.is_site(s) or not _present(spec.xi0, s, j) or label in spec.deleted:
        raise SimulationError(f"label {label} is not present at t=0")
    salts = dict(spec.salts)
    if salt == 0:
        salts.pop(label, None)
    else:
        salts[label] = salt
    return replace(spec, salts=tuple(sorted(salts.items(), key=repr)))


def delete_particle(spec: SystemSpec, label) -> SystemSpec:
    s, j = label
    if not _present(spec.xi0, s, j):
        raise SimulationError(f"label {label} is not present at t=0")
    return replace(spec, deleted=spec.deleted | {label})


def _present(xi0: Configuration, s, j) -> bool:
    c = xi0[s]
    return (j > 0 and c >= j) or (j < 0 and c <= j)
