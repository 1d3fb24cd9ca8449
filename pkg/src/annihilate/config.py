"""Experiment specifications: strict JSON round-trip plus up-front validation."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace

from .core import SimParams, SimulationError, format_nu, parse_nu
from .graph import GraphError, parse_graph

MODES = ("plain", "coupled-equal", "coupled-general", "entangled", "recurrence", "escape",
         "oracle-check", "truncation")


class SpecError(ValueError):
    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(str(d) for d in self.diagnostics))


@dataclass(frozen=True)
class Diagnostic:
    field: str
    message: str
    line: int | None = None

    def __str__(self):
        where = f"line {self.line}: " if self.line else ""
        return f"{where}{self.field}: {self.message}"


@dataclass
class Params:
    D_A: float = 1.0
    D_B: float = 1.0
    nu: str = "+1:0.25,-1:0.25,0:0.5"
    t_max: float = 100.0


@dataclass
class Coupling:
    m: float | None = None  # None: use delta^2 / (K t_max)
    delta: float = 0.25
    n: int = 0
    K: int = 1
    entangle: list | None = None  # [y, z] site coordinates


@dataclass
class Analysis:
    window: list | None = None  # [t_lo, t_hi] for the exponent fit
    site: list | None = None  # observation site; None means the origin
    ladder: list = field(default_factory=lambda: [100.0, 1000.0])
    horizons: list = field(default_factory=lambda: [10.0, 100.0])
    radii: list = field(default_factory=lambda: [8, 16, 24])
    t_cap: float = 10.0
    max_steps: int = 3
    bootstrap: int = 200


@dataclass
class ExperimentSpec:
    graph: str = "torus:d=1,L=1024"
    mode: str = "plain"
    params: Params = field(default_factory=Params)
    coupling: Coupling = field(default_factory=Coupling)
    analysis: Analysis = field(default_factory=Analysis)
    replicas: int = 1
    seed: int = 0
    out: str = "out"
    jobs: int = 0  # 0: one worker per available CPU

    # -- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict, lines: dict | None = None) -> "ExperimentSpec":
        diags = []
        spec = _build(cls, data, "", diags, lines or {})
        if diags:
            raise SpecError(diags)
        return spec

    @classmethod
    def from_json(cls, text: str) -> "ExperimentSpec":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SpecError([Diagnostic("<document>", exc.msg, exc.lineno)]) from None
        if not isinstance(data, dict):
            raise SpecError([Diagnostic("<document>", "top level must be an object")])
        return cls.from_dict(data, _key_lines(text))

    def params_obj(self) -> SimParams:
        p = self.params
        return SimParams(float(p.D_A), float(p.D_B), p.nu, float(p.t_max))

    def graph_obj(self):
        return parse_graph(self.graph)

    def coupling_m(self) -> float:
        c = self.coupling
        if c.m is not None:
            return float(c.m)
        return c.delta * c.delta / (c.K * float(self.params.t_max))

    # -- validation --------------------------------------------------------

    def validate(self) -> list[Diagnostic]:
        diags = []
        g = None
        try:
            g = self.graph_obj()
        except (GraphError, ValueError) as exc:
            diags.append(Diagnostic("graph", str(exc)))
        if self.mode not in MODES:
            diags.append(Diagnostic("mode", f"unknown mode {self.mode!r}; expected one of {MODES}"))
        try:
            nu = parse_nu(self.params.nu)
        except (SimulationError, ValueError) as exc:
            diags.append(Diagnostic("params.nu", str(exc)))
            nu = None
        p = self.params
        if p.D_A < 0 or p.D_B < 0:
            diags.append(Diagnostic("params", "jump rates must be nonnegative"))
        if max(p.D_A, p.D_B) <= 0:
            diags.append(Diagnostic("params", "D_A and D_B cannot both be zero; "
                                              "one of them must be positive"))
        if not p.t_max > 0:
            diags.append(Diagnostic("params.t_max", "must be positive"))
        if self.replicas < 1:
            diags.append(Diagnostic("replicas", "need at least one replica"))
        if self.jobs < 0:
            diags.append(Diagnostic("jobs", "must be nonnegative (0 means one per CPU)"))
        needs_finite = self.mode in ("plain", "coupled-equal", "coupled-general", "recurrence",
                                     "truncation", "oracle-check")
        if g is not None and needs_finite and not g.finite:
            diags.append(Diagnostic("graph", f"mode {self.mode!r} needs a finite graph"))
        if self.mode.startswith("coupled") and nu is not None:
            diags += self._validate_coupling(nu)
        if self.mode == "coupled-equal" and p.D_A != p.D_B:
            diags.append(Diagnostic("params", "coupled-equal needs D_A == D_B; "
                                              "use coupled-general"))
        if self.mode == "coupled-equal" and self.coupling.entangle is not None:
            diags.append(Diagnostic("coupling.entangle", "entangled tracers need the dragging "
                                                         "coupling; use coupled-general"))
        if self.mode in ("coupled-general", "entangled") and p.D_A < p.D_B:
            diags.append(Diagnostic("params", "the dragging coupling needs D_A >= D_B"))
        a = self.analysis
        if a.window is not None:
            if len(a.window) != 2 or not 0 < a.window[0] < a.window[1]:
                diags.append(Diagnostic("analysis.window", "need [t_lo, t_hi] with 0 < t_lo < t_hi"))
            elif a.window[1] > p.t_max:
                diags.append(Diagnostic("analysis.window", "window ends after t_max"))
        if any(t <= 0 for t in a.ladder) or list(a.ladder) != sorted(a.ladder):
            diags.append(Diagnostic("analysis.ladder", "times must be positive and increasing"))
        if self.mode == "recurrence" and a.ladder and max(a.ladder) > p.t_max:
            diags.append(Diagnostic("analysis.ladder", "ladder extends past t_max"))
        if any(r < 0 for r in a.radii) or list(a.radii) != sorted(a.radii):
            diags.append(Diagnostic("analysis.radii", "radii must be nonnegative and increasing"))
        if g is not None and a.site is not None and resolve_site(a.site, g) is None:
            diags.append(Diagnostic("analysis.site", f"{a.site} is not a site of {self.graph}"))
        if not 1 <= a.max_steps <= 5:
            diags.append(Diagnostic("analysis.max_steps", "exhaustive checks allow 1..5 steps"))
        if a.bootstrap < 200:
            diags.append(Diagnostic("analysis.bootstrap", "use at least 200 resamples"))
        return diags

    def _validate_coupling(self, nu) -> list[Diagnostic]:
        c = self.coupling
        out = []
        probs = dict(nu)
        if c.K < 1:
            out.append(Diagnostic("coupling.K", "must be a positive integer"))
            return out
        pn, pk = probs.get(c.n, 0.0), probs.get(c.n + c.K, 0.0)
        if pn <= 0 or pk <= 0:
            out.append(Diagnostic("coupling.n", f"need nu({c.n}) > 0 and nu({c.n + c.K}) > 0"))
            return out
        bound = 2 * min(pn, pk)
        m = self.coupling_m()
        if not 0 <= m <= bound:
            out.append(Diagnostic(
                "coupling.m", f"m={m} exceeds the coupling bound 2 min(nu(n), nu(n+K)) = {bound}"))
        return out

    def normalized(self) -> "ExperimentSpec":
        """Copy with the derived coupling density filled in and nu canonicalized."""
        diags = self.validate()
        if diags:
            raise SpecError(diags)
        spec = replace(self, params=replace(self.params, nu=format_nu(parse_nu(self.params.nu))))
        if spec.mode.startswith("coupled"):
            spec = replace(spec, coupling=replace(spec.coupling, m=self.coupling_m()))
        return spec


def _site(v):
    if isinstance(v, list):
        return tuple(_site(x) for x in v)
    return v


def resolve_site(value, graph):
    """Site object for a JSON value (list of coordinates or a bare integer); None if invalid."""
    if value is None:
        return graph.origin
    for cand in (_site(value), (value,) if not isinstance(value, list) else None):
        if cand is not None and graph.is_site(cand):
            return cand
    return None


_SECTIONS = {"params": Params, "coupling": Coupling, "analysis": Analysis}


def _build(cls, data, prefix, diags, lines):
    if not isinstance(data, dict):
        diags.append(Diagnostic(prefix.rstrip(".") or "<document>", "expected an object"))
        return cls()
    names = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        path = prefix + key
        if key not in names:
            diags.append(Diagnostic(path, "unknown key", lines.get(key)))
            continue
        sub = _SECTIONS.get(key) if cls is ExperimentSpec else None
        if sub is not None:
            kwargs[key] = _build(sub, value, path + ".", diags, lines)
            continue
        default = getattr(cls(), key)
        ok = _type_ok(default, value)
        if not ok:
            diags.append(Diagnostic(path, f"bad value {value!r}", lines.get(key)))
            continue
        kwargs[key] = float(value) if isinstance(default, float) and value is not None else value
    return cls(**kwargs)


def _type_ok(default, value):
    if value is None:
        return default is None or isinstance(default, list)
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, int) and not isinstance(default, bool):
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(default, float) or default is None:
        if default is None:
            return isinstance(value, (int, float, list)) and not isinstance(value, bool)
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, str):
        return isinstance(value, str)
    if isinstance(default, list):
        return isinstance(value, list)
    return True


def _key_lines(text: str) -> dict:
    """First line number on which each quoted key appears (for diagnostics)."""
    out = {}
    for no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if stripped.startswith('"'):
            key = stripped[1:].split('"', 1)[0]
            out.setdefault(key, no)
    return out
