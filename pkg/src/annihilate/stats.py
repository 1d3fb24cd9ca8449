"""Replica orchestration and the estimators built on top of it."""
from __future__ import annotations

import csv
import json
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numba as nb
import numpy as np

from . import rng
from .config import ExperimentSpec
from .core import (EventLog, SimParams, SystemSpec, run_raw, sample_initial, truncate)
from .core.engine import KIND_ANNIH, KIND_JUMP


class ReplicaError(RuntimeError):
    def __init__(self, seed, exc):
        super().__init__(f"replica with seed {seed} failed: {exc}")
        self.seed = seed


def log_grid(t_max: float, per_decade: int = 32, t_min: float = 0.1) -> np.ndarray:
    """``per_decade`` log-spaced times from ``t_min`` up to ``t_max`` (included)."""
    if t_max <= t_min:
        return np.array([float(t_max)])
    k0 = int(np.ceil(np.log10(t_min) * per_decade - 1e-9))
    k1 = int(np.floor(np.log10(t_max) * per_decade + 1e-9))
    grid = 10.0 ** (np.arange(k0, k1 + 1) / per_decade)
    grid = grid[grid < t_max * (1 - 1e-12)]
    return np.append(grid, float(t_max))


# ---------------------------------------------------------------------------
# density curves


@dataclass
class DensityCurve:
    t: np.ndarray
    n_sites: int
    n_a: np.ndarray  # (R, T) integer counts
    n_b: np.ndarray
    annihilations: np.ndarray
    wrap: np.ndarray  # first wrap-around time per replica
    seeds: np.ndarray

    @property
    def replicas(self) -> int:
        return self.n_a.shape[0]

    def per_replica(self, name: str) -> np.ndarray:
        if name == "mu_a":
            return self.n_a / self.n_sites
        if name == "mu_b":
            return self.n_b / self.n_sites
        if name == "rho":
            return (self.n_a + self.n_b) / self.n_sites
        if name == "theta":
            return self.annihilations / self.n_sites
        raise KeyError(name)

    def mean(self, name="rho") -> np.ndarray:
        return self.per_replica(name).mean(axis=0)

    def stderr(self, name="rho") -> np.ndarray:
        x = self.per_replica(name)
        if self.replicas < 2:
            return np.zeros(x.shape[1])
        return x.std(axis=0, ddof=1) / np.sqrt(self.replicas)

    def at(self, t: float, name="rho") -> tuple[float, float]:
        i = int(np.argmin(np.abs(self.t - t)))
        return float(self.mean(name)[i]), float(self.stderr(name)[i])

    def wrap_quantiles(self, qs=(0.05, 0.5, 0.95)) -> dict:
        if not np.isfinite(self.wrap).any():
            return {q: float("inf") for q in qs}
        return {q: float(np.quantile(self.wrap, q)) for q in qs}

    def rows(self):
        cols = [self.mean("mu_a"), self.stderr("mu_a"), self.mean("mu_b"), self.stderr("mu_b"),
                self.mean("rho"), self.stderr("rho"), self.mean("theta")]
        for i, t in enumerate(self.t):
            yield [float(t)] + [float(c[i]) for c in cols]

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "muA_mean", "muA_se", "muB_mean", "muB_se", "rho_mean", "rho_se",
                        "theta_mean"])
            for row in self.rows():
                w.writerow([repr(v) for v in row])

    @classmethod
    def synthetic(cls, t, rho, n_sites: int = 1):
        """Single-replica curve from a deterministic density (for fitting checks)."""
        rho = np.asarray(rho, dtype=float)[None, :]
        t = np.asarray(t, dtype=float)
        z = np.zeros_like(rho)
        return cls(t, n_sites, rho * n_sites, z, z, np.array([np.inf]), np.array([0]))


def _replica(args):
    graph, params, seed, grid, xi0_fn = args
    xi0 = sample_initial(graph, params.nu, seed) if xi0_fn is None else xi0_fn(graph, seed)
    raw = run_raw(SystemSpec(graph, xi0, params, seed), record=False, checkpoints=grid)
    a0, b0 = xi0.n_a, xi0.n_b
    if not (np.all(raw.chk_a - raw.chk_b == a0 - b0) and np.all(raw.chk_ann == a0 - raw.chk_a)):
        raise ReplicaError(seed, "mass conservation failed")
    return raw.chk_a, raw.chk_b, raw.chk_ann, raw.first_wrap


def _map(fn, jobs, tasks):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


def run_replicas(spec: ExperimentSpec | tuple, R: int, base_seed: int, *, jobs: int = 1,
                 grid=None, xi0_fn=None) -> DensityCurve:
    """``R`` independent plain runs with seeds ``base_seed + i``.

    ``spec`` is an ``ExperimentSpec`` or a ``(graph, SimParams)`` pair.
    ``xi0_fn(graph, seed)`` replaces the i.i.d. initial condition; it must be
    picklable when ``jobs > 1``.
    """
    if R < 1:
        raise ValueError("need at least one replica")
    graph, params = _graph_params(spec)
    grid = log_grid(params.t_max) if grid is None else np.asarray(grid, dtype=float)
    seeds = [base_seed + i for i in range(R)]
    tasks = [(graph, params, s, grid, xi0_fn) for s in seeds]
    try:
        out = _map(_replica, jobs, tasks)
    except ReplicaError:
        raise
    except Exception as exc:  # name the first failing seed
        for task in tasks:
            try:
                _replica(task)
            except Exception as inner:
                raise ReplicaError(task[2], inner) from exc
        raise
    n_a, n_b, ann, wrap = zip(*out)
    return DensityCurve(grid, graph.n_sites, np.array(n_a), np.array(n_b), np.array(ann),
                        np.array(wrap, dtype=float), np.array(seeds))


def _graph_params(spec):
    if isinstance(spec, ExperimentSpec):
        return spec.graph_obj(), spec.params_obj()
    graph, params = spec
    return graph, params


# ---------------------------------------------------------------------------
# exponent fits


@dataclass
class FitResult:
    slope: float
    intercept: float
    ci: tuple
    window: tuple
    n_points: int
    n_boot: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def _slope(logt, logr):
    A = np.vstack([logt, np.ones_like(logt)]).T
    coef, *_ = np.linalg.lstsq(A, logr, rcond=None)
    return coef


def fit_window(curve: DensityCurve, window, exclude_wrap=True) -> np.ndarray:
    lo, hi = window
    if exclude_wrap and np.isfinite(curve.wrap).any():
        hi = min(hi, curve.wrap_quantiles((0.05,))[0.05])
    return (curve.t >= lo * (1 - 1e-12)) & (curve.t <= hi * (1 + 1e-12))


def fit_exponent(curve: DensityCurve, window, n_boot: int = 200, seed: int = 0,
                 exclude_wrap: bool = True) -> FitResult:
    """Least-squares slope of ``log rho`` on ``log t`` with a replica bootstrap CI."""
    mask = fit_window(curve, window, exclude_wrap)
    if mask.sum() < 8:
        raise ValueError(f"only {int(mask.sum())} grid points in the fit window; need 8")
    if n_boot < 200:
        raise ValueError("use at least 200 bootstrap resamples")
    rho = curve.per_replica("rho")[:, mask]
    mean = rho.mean(axis=0)
    if np.any(mean <= 0):
        raise ValueError("nonpositive density inside the fit window")
    logt = np.log(curve.t[mask])
    slope, intercept = _slope(logt, np.log(mean))
    gen = np.random.default_rng(seed)
    R = rho.shape[0]
    boots = []
    for _ in range(n_boot):
        m = rho[gen.integers(0, R, R)].mean(axis=0)
        if np.all(m > 0):
            boots.append(_slope(logt, np.log(m))[0])
    lo, hi = np.quantile(boots, [0.025, 0.975]) if boots else (slope, slope)
    ci = (float(min(lo, slope)), float(max(hi, slope)))
    t = curve.t[mask]
    return FitResult(float(slope), float(intercept), ci, (float(t[0]), float(t[-1])),
                     int(mask.sum()), n_boot)


def lower_bound_audit(curve: DensityCurve, window, exclude_wrap=True) -> dict:
    """``min t (rho_mean - 3 se)`` over the window, against the 1/16 bound."""
    mask = fit_window(curve, window, exclude_wrap)
    t = curve.t[mask]
    lower = t * (curve.mean("rho")[mask] - 3 * curve.stderr("rho")[mask])
    central = t * curve.mean("rho")[mask]
    return {"min_t_rho_minus_3se": float(lower.min()), "min_t_rho": float(central.min()),
            "bound": 1 / 16, "holds": bool(lower.min() >= 1 / 16)}


# ---------------------------------------------------------------------------
# recurrence


@dataclass
class RecurrenceReport:
    site: object
    ladder: np.ndarray
    counts: np.ndarray  # (R, len(ladder))
    seeds: np.ndarray

    def medians(self) -> np.ndarray:
        return np.median(self.counts, axis=0)

    def increments(self) -> np.ndarray:
        return np.diff(self.counts, axis=1)

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["seed"] + [f"T={float(t)!r}" for t in self.ladder])
            for s, row in zip(self.seeds.tolist(), self.counts.tolist()):
                w.writerow([s] + row)


def _recurrence_one(args):
    graph, params, seed, site, ladder = args
    xi0 = sample_initial(graph, params.nu, seed)
    raw = run_raw(SystemSpec(graph, xi0, params, seed), record=False, watch=site, ladder=ladder)
    return raw.ladder_visits


def recurrence_counts(spec, site, ladder, R: int, base_seed: int = 0, *,
                      jobs: int = 1, xi0_fn=None) -> RecurrenceReport:
    """Per-replica visit counts at ``site`` (jumps landing there and annihilations there).

    ``xi0_fn(graph, seed)`` overrides the i.i.d. initial condition.
    """
    graph, params = _graph_params(spec)
    if not graph.is_site(site):
        raise ValueError(f"{site!r} is not a site")
    ladder = np.asarray(ladder, dtype=float)
    if np.any(np.diff(ladder) < 0):
        raise ValueError("ladder must be increasing")
    params = SimParams(params.D_A, params.D_B, params.nu, max(params.t_max, float(ladder.max())))
    seeds = [base_seed + i for i in range(R)]
    if xi0_fn is None:
        counts = _map(_recurrence_one, jobs, [(graph, params, s, site, ladder) for s in seeds])
    else:
        counts = [run_raw(SystemSpec(graph, xi0_fn(graph, s), params, s), record=False,
                          watch=site, ladder=ladder).ladder_visits for s in seeds]
    return RecurrenceReport(site, ladder, np.array(counts), np.array(seeds))


# ---------------------------------------------------------------------------
# escape probability and range


@nb.njit(cache=True)
def _escape_walks(indptr, dest, cum, edisp, period, seed, origin, rate, horizons, R):
    n_h = len(horizons)
    t_end = horizons[n_h - 1]
    never = np.ones((R, n_h), dtype=np.bool_)
    ranges = np.zeros((R, n_h), dtype=np.int64)
    wrap = np.full(R, np.inf)
    stamp = np.full(len(indptr) - 1, -1, dtype=np.int64)
    dim = edisp.shape[1]
    half = period // 2
    disp = np.zeros(dim, dtype=np.int64)
    for r in range(R):
        key = rng.stream_key(seed, rng.ESCAPE, r, 0, 0)
        x = origin
        stamp[x] = r
        size = 1
        returned = np.inf
        t = 0.0
        k = 0
        hi = 0
        disp[:] = 0
        while True:
            t += rng.exponential(key, 2 * k, rate)
            while hi < n_h and horizons[hi] < t:
                ranges[r, hi] = size
                never[r, hi] = returned > horizons[hi]
                hi += 1
            if t > t_end:
                break
            e = rng.step_index(cum, indptr[x], indptr[x + 1], rng.uniform(key, 2 * k + 1))
            x = dest[e]
            k += 1
            for c in range(dim):
                disp[c] += edisp[e, c]
                if wrap[r] == np.inf and abs(disp[c]) >= half:
                    wrap[r] = t
            if stamp[x] != r:
                stamp[x] = r
                size += 1
            if x == origin and returned == np.inf:
                returned = t
    return never, ranges, wrap


@dataclass
class EscapeReport:
    graph: str
    rate: float
    horizons: list
    R: int
    gamma_hat: list
    gamma_se: list
    mean_range: list
    range_se: list
    range_per_time: list
    gamma_times_rate: list
    wrap_median: float
    wrap_warning: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def escape_probability(graph, rate: float, T, R: int, seed: int = 0) -> EscapeReport:
    """Fraction of rate-``rate`` walks from the origin that have not returned by ``T``.

    ``T`` may be a list of horizons; every walk is reused across horizons, so
    the estimates are monotone in ``T``.
    """
    graph._require_finite()
    horizons = np.atleast_1d(np.asarray(T, dtype=float))
    if np.any(np.diff(horizons) <= 0):
        raise ValueError("horizons must be increasing")
    tab = graph.transition_table()
    never, ranges, wrap = _escape_walks(tab.indptr, tab.dest, tab.cum, tab.disp, tab.period,
                                        rng.to_seed(seed), graph.index(graph.origin),
                                        float(rate), horizons, R)
    g = never.mean(axis=0)
    se = np.sqrt(g * (1 - g) / R)
    mr = ranges.mean(axis=0)
    mr_se = ranges.std(axis=0, ddof=1) / np.sqrt(R) if R > 1 else np.zeros_like(mr)
    wm = float(np.median(wrap)) if np.isfinite(wrap).any() else float("inf")
    warn = [bool(h > wm) for h in horizons]
    if any(warn):
        warnings.warn("escape horizon exceeds the median wrap-around time", RuntimeWarning)
    return EscapeReport(repr(graph), float(rate), horizons.tolist(), R, g.tolist(), se.tolist(),
                        mr.tolist(), mr_se.tolist(), (mr / horizons).tolist(), (g * rate).tolist(), wm, warn)


def complete_graph_escape(n: int, rate: float, T: float) -> float:
    """Exact no-return probability by time ``T`` on ``K_n``."""
    lam = rate * T
    q = 1.0 - 1.0 / (n - 1)
    return float(np.exp(-lam) + np.exp(-lam) / q * np.expm1(lam * q))


# ---------------------------------------------------------------------------
# conservation audit


@dataclass
class AuditReport:
    n_logs: int
    n_events: int
    violations: list  # (log index, event index, message)

    @property
    def ok(self):
        return not self.violations


def conservation_audit(logs) -> AuditReport:
    """Replay each log and check every event against the occupancy it implies."""
    viol = []
    total = 0
    for li, log in enumerate(logs):
        total += len(log)
        viol += [(li, ei, msg) for ei, msg in _audit_one(log)]
    return AuditReport(len(logs), total, viol)


def _audit_one(log: EventLog):
    typ = log.label_type
    n = len(typ)
    pos = log.label_site.astype(np.int64).copy()
    alive = np.ones(n, dtype=bool)
    occ: dict = {}
    for p in range(n):
        occ.setdefault(int(pos[p]), set()).add(p)
    n_a0 = int(np.count_nonzero(typ > 0))
    n_a, n_b = n_a0, n - n_a0
    diff0 = n_a - n_b
    ann = 0
    last = -np.inf
    for i in range(len(log)):
        t, kind, p, q = float(log.t[i]), int(log.kind[i]), int(log.p[i]), int(log.q[i])
        src, dst = int(log.src[i]), int(log.dst[i])
        if t < last:
            yield i, "event times decrease"
        last = t
        if t > log.t_max:
            yield i, "event after t_max"
        if not 0 <= p < n or not alive[p]:
            yield i, f"jumper {p} is not alive"
            continue
        if pos[p] != src:
            yield i, f"jumper {p} is at {pos[p]}, not at {src}"
            continue
        here = occ.get(dst, set())
        opposite = [r for r in here if typ[r] != typ[p]]
        occ[src].discard(p)
        if kind == KIND_JUMP:
            if opposite:
                yield i, "jump onto opposite type without annihilation"
            pos[p] = dst
            occ.setdefault(dst, set()).add(p)
        elif kind == KIND_ANNIH:
            if q not in opposite:
                yield i, f"partner {q} is not an opposite resident at {dst}"
                continue
            if log.brave is not None and len(opposite) > 1:
                best = max(opposite, key=lambda r: log.brave[r])
                if best != q:
                    yield i, "partner is not the bravest resident"
            occ[dst].discard(q)
            alive[p] = alive[q] = False
            ann += 1
            n_a -= 1
            n_b -= 1
            if log.death[p] != t or log.death[q] != t:
                yield i, "death times disagree with the annihilation"
        else:
            yield i, f"unknown event kind {kind}"
            continue
        if n_a - n_b != diff0:
            yield i, "N_A - N_B changed"
        if ann != n_a0 - n_a:
            yield i, "annihilation count differs from N_A(0) - N_A(t)"
    if np.any(np.isfinite(log.death[alive])):
        yield len(log), "a surviving label has a finite death time"


# ---------------------------------------------------------------------------
# truncation stability


@dataclass
class TruncationReport:
    radii: list
    t_cap: float
    values: np.ndarray  # (seeds, radii): annihilation time of (center, 1), capped
    present: np.ndarray  # label present at t=0
    seeds: np.ndarray

    def stable_fraction(self, conditional: bool = False) -> list[float]:
        v = self.values[self.present] if conditional else self.values
        if len(v) == 0:
            return [float("nan")] * (len(self.radii) - 1)
        return [float(np.mean(v[:, i] == v[:, i + 1])) for i in range(len(self.radii) - 1)]

    def summary(self) -> dict:
        return {"radii": list(self.radii), "t_cap": self.t_cap, "seeds": int(len(self.seeds)),
                "present": int(self.present.sum()),
                "stable_fraction": self.stable_fraction(),
                "stable_fraction_given_present": self.stable_fraction(True)}


def truncation_stability(graph, params: SimParams, radii, seeds, center=None,
                         t_cap: float = 10.0) -> TruncationReport:
    """``min(T_{center,1}, t_cap)`` for the system truncated to each radius."""
    from .core import evolve

    center = graph.origin if center is None else center
    radii = list(radii)
    p = SimParams(params.D_A, params.D_B, params.nu, t_cap)
    seeds = np.asarray(list(seeds))
    values = np.zeros((len(seeds), len(radii)))
    present = np.zeros(len(seeds), dtype=bool)
    for i, s in enumerate(seeds.tolist()):
        xi0 = sample_initial(graph, params.nu, s)
        present[i] = xi0[center] >= 1
        for k, r in enumerate(radii):
            log, _ = evolve(graph, truncate(xi0, center, r), p, s)
            values[i, k] = min(log.annihilation_time((center, 1)), t_cap)
    return TruncationReport(radii, t_cap, values, present, seeds)
