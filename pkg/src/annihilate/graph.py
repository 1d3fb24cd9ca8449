"""Reflective graphs with invariant kernels and swap automorphisms.

Finite graphs expose a dense site index ``0..n_sites-1`` and a CSR transition
table (row pointers, destinations, row CDFs) that the compiled event loop
consumes.  Sites themselves stay human-readable: coordinate tuples on tori,
integers on complete graphs, reduced words on trees, tuples on products.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from itertools import product as iproduct
from typing import Callable, Hashable, Sequence

import numba as nb
import numpy as np

from .rng import step_index

KERNEL_TOL = 1e-12
MAX_WORD = 1 << 16

Site = Hashable


class GraphError(ValueError):
    pass


@dataclass(eq=False)
class Automorphism:
    """Lazily evaluated site map swapping ``pair[0]`` and ``pair[1]``."""

    pair: tuple
    fn: Callable[[Site], Site]
    _memo: dict = field(default_factory=dict, repr=False)

    def __call__(self, v):
        try:
            return self._memo[v]
        except KeyError:
            out = self._memo[v] = self.fn(v)
            return out

    def apply_path(self, path):
        return [self(v) for v in path]


@dataclass
class TransitionTable:
    indptr: np.ndarray
    dest: np.ndarray
    prob: np.ndarray
    cum: np.ndarray
    disp: np.ndarray  # per-entry displacement on tori, shape (E, 0) otherwise
    period: int  # torus side length for wrap detection, 0 if not a torus


def _as_uniform(u):
    if hasattr(u, "random"):
        return float(u.random())
    return float(u)


class ReflectiveGraph:
    """Common interface; subclasses fill in the geometry."""

    finite = True
    origin: Site

    # -- kernel ---------------------------------------------------------
    def _key(self):
        return (type(self).__name__, repr(self))

    def __eq__(self, other):
        return isinstance(other, ReflectiveGraph) and self._key() == other._key()

    def __hash__(self):
        return hash(self._key())

    def kernel_row(self, x) -> list[tuple[Site, float]]:
        raise NotImplementedError

    def kernel(self, x, y) -> float:
        return sum(p for v, p in self.kernel_row(x) if v == y)

    def sample_step(self, x, u):
        """One kernel step from ``x``; ``u`` is a uniform in [0, 1) or a Generator."""
        u = _as_uniform(u)
        if self.finite:
            tab = self.transition_table()
            a = self.index(x)
            return self.site(tab.dest[step_index(tab.cum, tab.indptr[a], tab.indptr[a + 1], u)])
        row = self.kernel_row(x)
        acc = 0.0
        for v, p in row:
            acc += p
            if u < acc:
                return v
        return row[-1][0]

    def distance(self, x, y) -> int:
        raise NotImplementedError

    def swap_automorphism(self, x, w) -> Automorphism:
        raise NotImplementedError

    def is_site(self, x) -> bool:
        raise NotImplementedError

    # -- finite-graph helpers --------------------------------------------
    n_sites: int

    def sites(self):
        return [self.site(i) for i in range(self.n_sites)]

    def index(self, x) -> int:
        raise NotImplementedError

    def site(self, i: int):
        raise NotImplementedError

    def _require_finite(self):
        if not self.finite:
            raise GraphError(f"{self!r} is infinite; operation needs a finite graph")

    def transition_table(self) -> TransitionTable:
        self._require_finite()
        if getattr(self, "_table", None) is None:
            self._table = self._build_table()
        return self._table

    def _build_table(self) -> TransitionTable:
        indptr = [0]
        dest, prob = [], []
        for i in range(self.n_sites):
            merged: dict[int, float] = {}
            for v, p in self.kernel_row(self.site(i)):
                if p > 0:
                    j = self.index(v)
                    merged[j] = merged.get(j, 0.0) + p
            dest.extend(merged)
            prob.extend(merged.values())
            indptr.append(len(dest))
        return _finish_table(np.array(indptr), np.array(dest), np.array(prob),
                             np.zeros((len(dest), 0), dtype=np.int64), 0)

    def distances_from(self, x) -> np.ndarray:
        """BFS distances over the kernel support from ``x`` to every site."""
        tab = self.transition_table()
        return _bfs(tab.indptr, tab.dest, self.index(x))

    def check_connected(self):
        if (self.distances_from(self.origin) < 0).any():
            raise GraphError("kernel support does not generate the whole vertex set")


@nb.njit(cache=True)
def _bfs(indptr, dest, source):
    n = len(indptr) - 1
    dist = np.full(n, -1, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    dist[source] = 0
    queue[0] = source
    head, tail = 0, 1
    while head < tail:
        a = queue[head]
        head += 1
        for e in range(indptr[a], indptr[a + 1]):
            b = dest[e]
            if dist[b] < 0:
                dist[b] = dist[a] + 1
                queue[tail] = b
                tail += 1
    return dist


@nb.njit(cache=True)
def _row_cdf(indptr, prob):
    cum = np.empty_like(prob)
    for a in range(len(indptr) - 1):
        acc = 0.0
        for e in range(indptr[a], indptr[a + 1]):
            acc += prob[e]
            cum[e] = acc
        cum[indptr[a + 1] - 1] = 1.0  # guards u close to 1 against rounding
    return cum


def _finish_table(indptr, dest, prob, disp, period):
    indptr = np.asarray(indptr, dtype=np.int64)
    prob = np.asarray(prob, dtype=np.float64)
    cum = _row_cdf(indptr, prob)
    return TransitionTable(indptr.astype(np.int64), dest.astype(np.int64),
                           prob.astype(np.float64), cum, disp.astype(np.int64), period)


def _check_probs(probs):
    probs = list(probs)
    if any(p < 0 for p in probs):
        raise GraphError("negative kernel probability")
    if abs(sum(probs) - 1.0) > KERNEL_TOL:
        raise GraphError(f"kernel probabilities sum to {sum(probs)!r}, not 1")


# ---------------------------------------------------------------------------
# tori


def nearest_neighbour_kernel(d: int) -> dict[tuple, float]:
    out = {}
    for axis in range(d):
        for s in (1, -1):
            v = [0] * d
            v[axis] = s
            out[tuple(v)] = 1.0 / (2 * d)
    return out


def box_kernel(d: int, r: int) -> dict[tuple, float]:
    disps = [v for v in iproduct(range(-r, r + 1), repeat=d) if any(v)]
    return {v: 1.0 / len(disps) for v in disps}


class Torus(ReflectiveGraph):
    """(Z/L)^d with a translation-invariant kernel given by displacements."""

    def __init__(self, d: int, L: int, kernel=None):
        if d < 1 or L < 2:
            raise GraphError("torus needs d >= 1 and L >= 2")
        self.d, self.L = d, L
        if kernel is None or kernel == "nn":
            kernel = nearest_neighbour_kernel(d)
            self.kernel_name = "nn"
        else:
            kernel = {tuple(int(c) for c in np.atleast_1d(k)): float(p)
                      for k, p in dict(kernel).items()}
            self.kernel_name = "custom"
        for v in kernel:
            if len(v) != d:
                raise GraphError(f"displacement {v} has wrong dimension")
        kernel = {v: p for v, p in kernel.items() if p > 0}
        _check_probs(kernel.values())
        for v, p in kernel.items():
            neg = tuple(-c for c in v)
            if abs(kernel.get(neg, 0.0) - p) > KERNEL_TOL:
                raise GraphError(
                    f"asymmetric torus kernel: p(o,{v})={p} but p(o,{neg})="
                    f"{kernel.get(neg, 0.0)}; swap reflections need p(o,y)=p(o,-y)")
        self.displacements = list(kernel)
        self.probs = [kernel[v] for v in self.displacements]
        self.n_sites = L ** d
        self.origin = (0,) * d
        self._table = None
        self._dist0 = None
        self.check_connected()

    def __repr__(self):
        return f"Torus(d={self.d}, L={self.L}, kernel={self.kernel_name})"

    def spec(self):
        return f"torus:d={self.d},L={self.L},kernel={self.kernel_name}"

    def _key(self):
        return ("Torus", self.d, self.L, tuple(sorted(zip(self.displacements, self.probs))))

    def is_site(self, x):
        return (isinstance(x, tuple) and len(x) == self.d
                and all(isinstance(c, (int, np.integer)) and 0 <= c < self.L for c in x))

    def index(self, x):
        i = 0
        for c in reversed(x):
            i = i * self.L + int(c)
        return i

    def site(self, i):
        out = []
        for _ in range(self.d):
            out.append(int(i % self.L))
            i //= self.L
        return tuple(out)

    def _add(self, x, v):
        return tuple((a + b) % self.L for a, b in zip(x, v))

    def kernel_row(self, x):
        return [(self._add(x, v), p) for v, p in zip(self.displacements, self.probs)]

    def _build_table(self):
        d, L, n = self.d, self.L, self.n_sites
        coords = np.stack(np.unravel_index(np.arange(n), (L,) * d, order="F"), axis=1)
        reduced = [tuple(c % L for c in v) for v in self.displacements]
        if len(set(reduced)) < len(reduced):
            # displacements collide modulo L: merge them per row
            tab = super()._build_table()
            disp = np.zeros((len(tab.dest), d), dtype=np.int64)
            for a in range(n):
                x = self.site(a)
                for e in range(tab.indptr[a], tab.indptr[a + 1]):
                    y = self.site(tab.dest[e])
                    disp[e] = [((b - c + L // 2) % L) - L // 2 for b, c in zip(y, x)]
            return _finish_table(tab.indptr, tab.dest, tab.prob, disp, L)
        k = len(self.displacements)
        dv = np.array(self.displacements, dtype=np.int64)
        dest = np.empty((n, k), dtype=np.int64)
        for e in range(k):
            moved = (coords + dv[e]) % L
            dest[:, e] = np.ravel_multi_index(moved.T, (L,) * d, order="F")
        indptr = np.arange(n + 1, dtype=np.int64) * k
        prob = np.tile(np.array(self.probs), n)
        disp = np.tile(dv, (n, 1))
        return _finish_table(indptr, dest.ravel(), prob, disp, L)

    def distance(self, x, y):
        if self.kernel_name == "nn":
            return sum(min((a - b) % self.L, (b - a) % self.L) for a, b in zip(x, y))
        if self._dist0 is None:
            self._dist0 = self.distances_from(self.origin)
        return int(self._dist0[self.index(tuple((b - a) % self.L for a, b in zip(x, y)))])

    def swap_automorphism(self, x, w):
        x, w = tuple(x), tuple(w)
        s = tuple(a + b for a, b in zip(x, w))
        L = self.L
        return Automorphism((x, w), lambda v: tuple((c - a) % L for c, a in zip(s, v)))


def cycle(n: int) -> Torus:
    return Torus(1, n)


# ---------------------------------------------------------------------------
# complete graphs


class CompleteGraph(ReflectiveGraph):
    def __init__(self, n: int):
        if n < 2:
            raise GraphError("complete graph needs n >= 2")
        self.n = self.n_sites = n
        self.origin = 0
        self._table = None

    def __repr__(self):
        return f"CompleteGraph(n={self.n})"

    def spec(self):
        return f"complete:n={self.n}"

    def is_site(self, x):
        return isinstance(x, (int, np.integer)) and 0 <= x < self.n

    def index(self, x):
        return int(x)

    def site(self, i):
        return int(i)

    def kernel_row(self, x):
        p = 1.0 / (self.n - 1)
        return [(y, p) for y in range(self.n) if y != x]

    def distance(self, x, y):
        return 0 if x == y else 1

    def swap_automorphism(self, x, w):
        def transpose(v):
            return w if v == x else x if v == w else v
        return Automorphism((x, w), transpose)


# ---------------------------------------------------------------------------
# regular trees as Cayley graphs of the free product of r copies of Z/2


def reduce_word(word: Sequence[int]) -> tuple:
    out: list[int] = []
    for a in word:
        if out and out[-1] == a:
            out.pop()
        else:
            out.append(a)
    if len(out) > MAX_WORD:
        raise GraphError(f"tree word longer than {MAX_WORD}")
    return tuple(out)


def _common_prefix(a, b):
    n = min(len(a), len(b))
    i = 0
    while i < n and a[i] == b[i]:
        i += 1
    return i


class RegularTree(ReflectiveGraph):
    """Infinite r-regular tree; a site is a word with no letter repeated twice in a row."""

    finite = False

    def __init__(self, r: int):
        if r < 3:
            raise GraphError("regular tree needs r >= 3")
        self.r = r
        self.origin = ()

    def __repr__(self):
        return f"RegularTree(r={self.r})"

    def spec(self):
        return f"tree:r={self.r}"

    def is_site(self, x):
        return (isinstance(x, tuple) and all(0 <= a < self.r for a in x)
                and all(x[i] != x[i + 1] for i in range(len(x) - 1)))

    def kernel_row(self, x):
        return [(reduce_word(x + (a,)), 1.0 / self.r) for a in range(self.r)]

    def sample_step(self, x, u):
        a = min(int(_as_uniform(u) * self.r), self.r - 1)
        return reduce_word(tuple(x) + (a,))

    def distance(self, x, y):
        i = _common_prefix(x, y)
        return len(x) + len(y) - 2 * i

    def swap_automorphism(self, x, w):
        x, w = tuple(x), tuple(w)
        if x == w:
            return Automorphism((x, w), lambda v: v)
        x_inv = tuple(reversed(x))
        h = reduce_word(x_inv + w)
        k = len(h)
        r = self.r
        taus: dict[int, dict[int, int]] = {}

        def tau(i):
            # letter map at geodesic vertex i; it reverses the geodesic direction
            if i not in taus:
                fixed = {}
                if i >= 1:
                    fixed[h[i - 1]] = h[k - i]
                if i < k:
                    fixed[h[i]] = h[k - i - 1]
                rest_src = [a for a in range(r) if a not in fixed]
                rest_dst = [a for a in range(r) if a not in fixed.values()]
                fixed.update(zip(rest_src, rest_dst))
                taus[i] = fixed
            return taus[i]

        def reflect(v):
            u = reduce_word(x_inv + tuple(v))
            i = _common_prefix(u, h)
            t = tau(i)
            image = h[:k - i] + tuple(t[a] for a in u[i:])
            return reduce_word(x + image)

        return Automorphism((x, w), reflect)


# ---------------------------------------------------------------------------
# products


class ProductGraph(ReflectiveGraph):
    """Cartesian product; a step picks component ``i`` with weight ``alpha_i``."""

    def __init__(self, components: Sequence[ReflectiveGraph], weights: Sequence[float]):
        if len(components) == 0 or len(components) != len(weights):
            raise GraphError("product needs one positive weight per component")
        if any(w <= 0 for w in weights):
            raise GraphError("product weights must be positive")
        _check_probs(weights)
        self.components = list(components)
        self.weights = [float(w) for w in weights]
        self.finite = all(c.finite for c in components)
        self.origin = tuple(c.origin for c in components)
        self._table = None
        if self.finite:
            self._sizes = [c.n_sites for c in components]
            self.n_sites = math.prod(self._sizes)

    def __repr__(self):
        return f"ProductGraph({self.components}, {self.weights})"

    def spec(self):
        inner = ";".join(c.spec() for c in self.components)
        return f"product:[{inner}],weights=" + ";".join(repr(w) for w in self.weights)

    def is_site(self, x):
        return (isinstance(x, tuple) and len(x) == len(self.components)
                and all(c.is_site(a) for c, a in zip(self.components, x)))

    def index(self, x):
        i = 0
        for c, a, n in zip(reversed(self.components), reversed(x), reversed(self._sizes)):
            i = i * n + c.index(a)
        return i

    def site(self, i):
        out = []
        for c, n in zip(self.components, self._sizes):
            out.append(c.site(i % n))
            i //= n
        return tuple(out)

    def kernel_row(self, x):
        row = []
        for i, (c, w) in enumerate(zip(self.components, self.weights)):
            for v, p in c.kernel_row(x[i]):
                row.append((x[:i] + (v,) + x[i + 1:], w * p))
        return row

    def sample_step(self, x, u):
        if self.finite:
            return super().sample_step(x, u)
        u = _as_uniform(u)
        acc = 0.0
        last = len(self.components) - 1
        for i, w in enumerate(self.weights):
            if u < acc + w or i == last:
                inner = min(max((u - acc) / w, 0.0), np.nextafter(1.0, 0.0))
                return x[:i] + (self.components[i].sample_step(x[i], inner),) + x[i + 1:]
            acc += w

    def distance(self, x, y):
        return sum(c.distance(a, b) for c, a, b in zip(self.components, x, y))

    def swap_automorphism(self, x, w):
        parts = [c.swap_automorphism(a, b) for c, a, b in zip(self.components, x, w)]
        return Automorphism((tuple(x), tuple(w)),
                            lambda v: tuple(p(a) for p, a in zip(parts, v)))


# ---------------------------------------------------------------------------
# constructors and spec strings


def make_torus(d: int, L: int, kernel="nn") -> Torus:
    return Torus(d, L, kernel)


def make_complete(n: int) -> CompleteGraph:
    return CompleteGraph(n)


def make_tree(r: int) -> RegularTree:
    return RegularTree(r)


def make_product(components, weights) -> ProductGraph:
    return ProductGraph(components, weights)


def _kv(body: str) -> dict[str, str]:
    out = {}
    for part in filter(None, body.split(",")):
        if "=" not in part:
            raise GraphError(f"expected key=value, got {part!r}")
        k, v = part.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _int(kv, key, default=None):
    if key not in kv:
        if default is None:
            raise GraphError(f"missing {key}=")
        return default
    try:
        return int(kv[key])
    except ValueError:
        raise GraphError(f"{key} must be an integer, got {kv[key]!r}") from None


def _explicit_kernel(text: str) -> dict:
    """``1/0:0.25|-1/0:0.25|...``: displacement coordinates joined by ``/``."""
    out = {}
    try:
        for part in text.split("|"):
            v, p = part.split(":")
            out[tuple(int(c) for c in v.split("/"))] = float(p)
    except ValueError:
        raise GraphError(f"bad kernel {text!r}; expected e.g. 1:0.5|-1:0.5") from None
    return out


def parse_graph(text: str) -> ReflectiveGraph:
    """Parse ``torus:d=1,L=64,kernel=nn``, ``cycle:n=8``, ``complete:n=4``,
    ``tree:r=3`` or ``product:[g1;g2],weights=0.5;0.5``.

    Torus kernels: ``nn``, ``boxR`` or explicit ``1:0.5|-1:0.5`` (coordinates
    of a displacement joined by ``/``).
    """
    text = text.strip()
    family, _, body = text.partition(":")
    if family == "product":
        m = re.fullmatch(r"\[(.*)\](?:,weights=(.*))?", body)
        if not m:
            raise GraphError(f"bad product spec {text!r}")
        comps = [parse_graph(c) for c in _split_top(m.group(1))]
        if m.group(2):
            weights = [float(w) for w in m.group(2).split(";")]
        else:
            weights = [1.0 / len(comps)] * len(comps)
        return make_product(comps, weights)
    kv = _kv(body)
    if family == "torus":
        extra = set(kv) - {"d", "L", "kernel"}
        if extra:
            raise GraphError(f"unknown torus keys {sorted(extra)}")
        d, L = _int(kv, "d", 1), _int(kv, "L")
        kname = kv.get("kernel", "nn")
        if kname == "nn":
            kernel = "nn"
        elif kname.startswith("box"):
            kernel = box_kernel(d, int(kname[3:] or 1))
        elif ":" in kname:
            kernel = _explicit_kernel(kname)
        else:
            raise GraphError(f"unknown torus kernel {kname!r}")
        g = make_torus(d, L, kernel)
        g.kernel_name = kname
        return g
    if family == "cycle":
        return make_torus(1, _int(kv, "n"))
    if family == "complete":
        return make_complete(_int(kv, "n"))
    if family == "tree":
        return make_tree(_int(kv, "r"))
    raise GraphError(f"unknown graph family {family!r}")


def _split_top(s: str) -> list[str]:
    parts, depth, cur = [], 0, []
    for ch in s:
        if ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
        if ch == ";" and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    parts.append("".join(cur))
    return [p for p in parts if p.strip()]


__all__ = [
    "Automorphism", "CompleteGraph", "GraphError", "ProductGraph", "ReflectiveGraph",
    "RegularTree", "Torus", "TransitionTable", "box_kernel", "cycle", "make_complete",
    "make_product", "make_tree", "make_torus", "nearest_neighbour_kernel", "parse_graph",
    "reduce_word", "step_index",
]
