"""Command-line entry point: ``annihilate {run,validate,oracle-check,entangle-demo,fit}``.

Exit codes: 0 success, 2 invalid spec, 3 an exact invariant failed.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import subprocess
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, stats
from .config import MODES, Diagnostic, ExperimentSpec, SpecError, resolve_site
from .core import MassLedger, sample_initial

EXIT_OK, EXIT_SPEC, EXIT_INVARIANT = 0, 2, 3


class InvariantFailure(RuntimeError):
    def __init__(self, invariant, seed, detail):
        super().__init__(f"{invariant} violated (seed {seed}): {detail}")
        self.invariant = invariant
        self.seed = seed


def version_string() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).parent, capture_output=True, text=True,
                             timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


# ---------------------------------------------------------------------------
# argument handling


def _floats(text):
    return [float(v) for v in text.split(",") if v]


def _ints(text):
    return [int(v) for v in text.split(",") if v]


def _add_spec_flags(p):
    p.add_argument("--spec", help="JSON experiment spec; flags override its values")
    p.add_argument("--graph")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--nu", help="value:prob list, e.g. +1:0.25,-1:0.25,0:0.5")
    p.add_argument("--da", type=float, dest="D_A")
    p.add_argument("--db", type=float, dest="D_B")
    p.add_argument("--tmax", type=float, dest="t_max")
    p.add_argument("--replicas", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--jobs", type=int)
    p.add_argument("--m", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--n", type=int)
    p.add_argument("--K", type=int)
    p.add_argument("--entangle", help="y;z site coordinates, e.g. 0;5 or 0,0;3,4")
    p.add_argument("--window", type=_floats, help="t_lo,t_hi")
    p.add_argument("--site", type=_ints, help="comma-separated coordinates")
    p.add_argument("--ladder", type=_floats)
    p.add_argument("--horizons", type=_floats)
    p.add_argument("--radii", type=_ints)
    p.add_argument("--t-cap", type=float, dest="t_cap")
    p.add_argument("--max-steps", type=int, dest="max_steps")
    p.add_argument("--bootstrap", type=int)


def _site_value(coords):
    return coords[0] if len(coords) == 1 else list(coords)


def spec_from_args(args) -> ExperimentSpec:
    if args.spec:
        spec = ExperimentSpec.from_json(Path(args.spec).read_text(encoding="utf-8"))
    else:
        spec = ExperimentSpec()
    env_out = os.environ.get("ANNIHILATE_OUT")
    if env_out:
        spec = replace(spec, out=env_out)
    top = {k: getattr(args, k) for k in ("graph", "mode", "replicas", "seed", "out", "jobs")}
    spec = replace(spec, **{k: v for k, v in top.items() if v is not None})
    par = {k: getattr(args, k) for k in ("nu", "D_A", "D_B", "t_max")}
    spec = replace(spec, params=replace(spec.params, **{k: v for k, v in par.items()
                                                        if v is not None}))
    cpl = {k: getattr(args, k) for k in ("m", "delta", "n", "K")}
    if args.entangle:
        cpl["entangle"] = [_site_value(_ints(part.replace(" ", "")))
                           for part in args.entangle.split(";")]
    spec = replace(spec, coupling=replace(spec.coupling, **{k: v for k, v in cpl.items()
                                                            if v is not None}))
    ana = {k: getattr(args, k) for k in ("window", "ladder", "horizons", "radii", "t_cap",
                                          "max_steps", "bootstrap")}
    if args.site is not None:
        ana["site"] = _site_value(args.site)
    return replace(spec, analysis=replace(spec.analysis, **{k: v for k, v in ana.items()
                                                           if v is not None}))


def _site(value, graph):
    site = resolve_site(value, graph)
    if site is None:
        raise SpecError([Diagnostic("site", f"{value!r} is not a site of {graph.spec()}")])
    return site


# ---------------------------------------------------------------------------
# experiment modes


def _json_safe(obj):
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def _write_json(path, obj):
    text = json.dumps(_json_safe(obj), indent=2, sort_keys=True, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def _write_replicas(path, curve):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "first_wrap"] + [repr(float(t)) for t in curve.t])
        rho = curve.per_replica("rho")
        for s, wr, row in zip(curve.seeds.tolist(), curve.wrap.tolist(), rho.tolist()):
            w.writerow([s, repr(wr)] + [repr(v) for v in row])


def _read_replicas(path, n_sites=1):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    t = np.array([float(v) for v in rows[0][2:]])
    seeds = np.array([int(r[0]) for r in rows[1:]])
    wrap = np.array([float(r[1]) for r in rows[1:]])
    rho = np.array([[float(v) for v in r[2:]] for r in rows[1:]])
    z = np.zeros_like(rho)
    return stats.DensityCurve(t, n_sites, rho * n_sites, z, z, wrap, seeds)


def _fit_payload(curve, spec):
    window = spec.analysis.window
    fit = stats.fit_exponent(curve, window, n_boot=spec.analysis.bootstrap, seed=spec.seed)
    out = json.loads(fit.to_json())
    out["lower_bound"] = stats.lower_bound_audit(curve, window)
    out["wrap_quantiles"] = {str(k): v for k, v in curve.wrap_quantiles().items()}
    return out


def mode_plain(spec, g, params, out: Path) -> dict:
    try:
        curve = stats.run_replicas((g, params), spec.replicas, spec.seed, jobs=spec.jobs)
    except stats.ReplicaError as exc:
        raise InvariantFailure("mass conservation", exc.seed, str(exc)) from exc
    curve.to_csv(out / "density.csv")
    _write_replicas(out / "rho_replicas.csv", curve)
    files = ["density.csv", "rho_replicas.csv"]
    if spec.analysis.window is not None:
        _write_json(out / "fit.json", _fit_payload(curve, spec))
        files.append("fit.json")
    return {"files": files}


def _ledger_curve(ledgers, grid, n_sites, seeds):
    n_a = np.array([[lg.at(t)[0] for t in grid] for lg in ledgers])
    n_b = np.array([[lg.at(t)[1] for t in grid] for lg in ledgers])
    ann = np.array([[lg.at(t)[2] for t in grid] for lg in ledgers])
    return stats.DensityCurve(grid, n_sites, n_a, n_b, ann, np.full(len(ledgers), np.inf),
                              np.array(seeds))


def mode_coupled(spec, g, params, out: Path) -> dict:
    from .coupling import (CouplingError, IdentityViolation, couple_initial,
                           evolve_coupled_equal, evolve_coupled_general)

    m = spec.coupling_m()
    c = spec.coupling
    entangle = None
    if c.entangle is not None:
        entangle = tuple(_site(v, g) for v in c.entangle)
    base, mod, summary = [], [], []
    seeds = [spec.seed + i for i in range(spec.replicas)]
    for s in seeds:
        xi0 = sample_initial(g, params.nu, s)
        init = couple_initial(xi0, params.nu, m, c.n, c.K, s)
        try:
            if spec.mode == "coupled-equal":
                run = evolve_coupled_equal(g, init, params, s)
            else:
                run = evolve_coupled_general(g, init, params, s, entangle=entangle)
        except IdentityViolation as exc:
            raise InvariantFailure("difference identity", s, str(exc)) from exc
        except CouplingError as exc:
            raise InvariantFailure("tracer successor rule", s, str(exc)) from exc
        if run.pair is not None and (run.pair.violations
                                     or not run.pair.containment_holds(params.t_max)):
            raise InvariantFailure("entangled distance invariant", s,
                                   "; ".join(run.pair.violations) or "hit-set containment")
        if s == seeds[0]:
            run.write_tracers(out / "tracers.jsonl")
        lb, lm = run.ledgers()
        base.append(lb)
        mod.append(lm)
        summary.append({"seed": s, "events": run.n_events, "identity_checks": run.n_checks,
                        "tracers": len(run.tracers),
                        "active_at_end": len(run.active_tracers())})
    grid = stats.log_grid(params.t_max)
    _ledger_curve(base, grid, g.n_sites, seeds).to_csv(out / "density_base.csv")
    _ledger_curve(mod, grid, g.n_sites, seeds).to_csv(out / "density_modified.csv")
    _write_json(out / "coupled.json", {"m": m, "n": c.n, "K": c.K, "runs": summary})
    return {"files": ["tracers.jsonl", "density_base.csv", "density_modified.csv",
                      "coupled.json"]}


def mode_entangled(spec, g, params, out: Path) -> dict:
    from .coupling import Quintuple, Stepper, entangle_continuous

    st = Stepper(g)
    pair = spec.coupling.entangle
    y = _site(pair[0], g) if pair else g.origin
    z = _site(pair[1], g) if pair else g.sample_step(g.origin, 0.0)
    yi, zi = (g.index(y), g.index(z)) if st.indexed else (y, z)
    rows = []
    for i in range(spec.replicas):
        s = spec.seed + i
        q = Quintuple(st, yi, zi, params.D_A, params.D_B, s)
        run = entangle_continuous(g, q, params.t_max)
        if not run.ok:
            raise InvariantFailure("entangled distance invariant", s,
                                   "; ".join(run.violations) or "hit-set containment")
        rows.append([s, len(run.pair.labels), len(run.pair.walk.switches),
                     run.distance(params.t_max)])
    with open(out / "entangle.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "steps", "switches", "distance_at_tmax"])
        w.writerows(rows)
    return {"files": ["entangle.csv"]}


def mode_recurrence(spec, g, params, out: Path) -> dict:
    site = _site(spec.analysis.site, g)
    rep = stats.recurrence_counts((g, params), site, spec.analysis.ladder, spec.replicas,
                                  spec.seed, jobs=spec.jobs)
    rep.to_csv(out / "recurrence.csv")
    _write_json(out / "recurrence.json", {"ladder": rep.ladder.tolist(),
                                          "median": rep.medians().tolist(),
                                          "min_increment": rep.increments().min(axis=0).tolist()
                                          if rep.counts.shape[1] > 1 else []})
    return {"files": ["recurrence.csv", "recurrence.json"]}


def mode_escape(spec, g, params, out: Path) -> dict:
    rep = stats.escape_probability(g, params.D_A, spec.analysis.horizons, spec.replicas,
                                   spec.seed)
    _write_json(out / "escape.json", json.loads(rep.to_json()))
    return {"files": ["escape.json"]}


def mode_truncation(spec, g, params, out: Path) -> dict:
    rep = stats.truncation_stability(g, params, spec.analysis.radii,
                                     range(spec.seed, spec.seed + spec.replicas),
                                     _site(spec.analysis.site, g), spec.analysis.t_cap)
    _write_json(out / "truncation.json", rep.summary())
    return {"files": ["truncation.json"]}


def oracle_report(g, max_steps: int) -> dict:
    from .oracle import brute_entangle_check

    rows = []
    for n in range(1, max_steps + 1):
        r = brute_entangle_check(g, n)
        rows.append({"check": f"entangle n={n}", "passed": r.passed, "max_tv": r.max_tv,
                     "distance_violations": r.distance_violations,
                     "mover_violations": r.mover_violations})
    return {"graph": g.spec(), "rows": rows, "passed": all(r["passed"] for r in rows)}


def mode_oracle(spec, g, params, out: Path) -> dict:
    rep = oracle_report(g, spec.analysis.max_steps)
    _write_json(out / "oracle.json", rep)
    _print_oracle(rep)
    if not rep["passed"]:
        raise InvariantFailure("exhaustive entangle check", spec.seed, "see oracle.json")
    return {"files": ["oracle.json"]}


def _print_oracle(rep):
    print(f"oracle check on {rep['graph']}")
    for r in rep["rows"]:
        print(f"  {'PASS' if r['passed'] else 'FAIL'}  {r['check']:<16} max_tv={r['max_tv']:.3g}")


MODE_FNS = {"plain": mode_plain, "coupled-equal": mode_coupled, "coupled-general": mode_coupled,
            "entangled": mode_entangled, "recurrence": mode_recurrence, "escape": mode_escape,
            "oracle-check": mode_oracle, "truncation": mode_truncation}


def execute(spec: ExperimentSpec) -> int:
    spec = spec.normalized()
    if spec.jobs == 0:
        spec = replace(spec, jobs=os.cpu_count() or 1)
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    g = spec.graph_obj()
    params = spec.params_obj()
    start = time.perf_counter()
    status, failure = EXIT_OK, None
    info = {"files": []}
    try:
        info = MODE_FNS[spec.mode](spec, g, params, out)
    except InvariantFailure as exc:
        status = EXIT_INVARIANT
        failure = {"invariant": exc.invariant, "seed": exc.seed, "detail": str(exc)}
        print(f"error: {exc}", file=sys.stderr)
    manifest = {"spec": spec.to_dict(), "seed": spec.seed, "version": version_string(),
                "wall_time_s": round(time.perf_counter() - start, 3),
                "artifacts": info["files"], "exit_code": status, "failure": failure}
    _write_json(out / "manifest.json", manifest)
    return status


# ---------------------------------------------------------------------------
# subcommands


def cmd_run(args) -> int:
    spec = spec_from_args(args)
    return execute(spec)


def cmd_validate(args) -> int:
    spec = spec_from_args(args)
    diags = spec.validate()
    if diags:
        for d in diags:
            print(f"error: {d}", file=sys.stderr)
        return EXIT_SPEC
    print(spec.normalized().to_json())
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    from .graph import parse_graph

    g = parse_graph(args.graph)
    if not g.finite:
        raise SpecError([Diagnostic("graph", "oracle checks need a finite graph")])
    if not 1 <= args.max_steps <= 5:
        raise SpecError([Diagnostic("max-steps", "exhaustive checks allow 1..5 steps")])
    rep = oracle_report(g, args.max_steps)
    _print_oracle(rep)
    out = Path(args.out or os.environ.get("ANNIHILATE_OUT") or ".")
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "oracle.json", rep)
    return EXIT_OK if rep["passed"] else EXIT_INVARIANT


def cmd_entangle_demo(args) -> int:
    from .coupling import Stepper, entangle_trace
    from .coupling.clocks import DiscretePath
    from .graph import parse_graph
    from . import rng

    g = parse_graph(args.graph)
    y = _site(_site_value(args.y), g)
    z = _site(_site_value(args.z), g)
    for name, v in (("y", y), ("z", z)):
        if not g.is_site(v):
            raise SpecError([Diagnostic(name, f"{v!r} is not a site of {args.graph}")])
    if args.Z:
        Z = [_site(_site_value(_ints(part)), g) for part in args.Z.split(";")]
        if Z[0] != y:
            raise SpecError([Diagnostic("Z", "the path must start at y")])
        for a, b in zip(Z, Z[1:]):
            if g.kernel(a, b) <= 0:
                raise SpecError([Diagnostic("Z", f"{a!r} -> {b!r} is not a kernel step")])
    else:
        walk = DiscretePath(Stepper(g, indexed=False),
                            rng.Stream(rng.to_seed(args.seed), rng.ENTANGLE_WALK, 0), y)
        Z = walk.prefix(args.steps)
    n = len(Z) - 1
    if args.ell:
        ell = _ints(args.ell)
    else:
        u = rng.Stream(rng.to_seed(args.seed), rng.ENTANGLE_CLOCK, 0)
        ell = [1 + int(u.uniform(k) < 0.5) for k in range(n)]
    rows = entangle_trace(g, Z, z, ell)
    out = Path(args.out or os.environ.get("ANNIHILATE_OUT") or ".")
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "entangle_trace.jsonl", "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(json.dumps({"n": r.n, "label": r.label, "switched": r.switched,
                                 "Z": _plain(r.Z), "image": _plain(r.image),
                                 "anchor": _plain(r.anchor), "Wy": _plain(r.Wy),
                                 "Wz": _plain(r.Wz), "distance": r.distance}) + "\n")
    print(f"{'n':>3} {'l':>2} {'sw':>3} {'Z':>10} {'W^y':>10} {'W^z':>10} {'d':>3}")
    ok = True
    for r in rows:
        ok &= r.distance == g.distance(r.Z, z)
        print(f"{r.n:>3} {r.label:>2} {'*' if r.switched else '':>3} {str(r.Z):>10} "
              f"{str(r.Wy):>10} {str(r.Wz):>10} {r.distance:>3}")
    return EXIT_OK if ok else EXIT_INVARIANT


def _plain(x):
    if isinstance(x, tuple):
        return [_plain(v) for v in x]
    if isinstance(x, np.integer):
        return int(x)
    return x


def cmd_fit(args) -> int:
    d = Path(args.dir)
    curve = _read_replicas(d / "rho_replicas.csv")
    fit = stats.fit_exponent(curve, args.window, n_boot=args.bootstrap, seed=args.seed)
    payload = json.loads(fit.to_json())
    payload["lower_bound"] = stats.lower_bound_audit(curve, args.window)
    _write_json(d / "fit.json", payload)
    print(json.dumps(payload, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="annihilate", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run an experiment and write artifacts")
    _add_spec_flags(p)
    p.set_defaults(fn=cmd_run)
    p = sub.add_parser("validate", help="check a spec and print its normalized form")
    _add_spec_flags(p)
    p.set_defaults(fn=cmd_validate)
    p = sub.add_parser("oracle-check", help="exhaustive check of the entangled construction")
    p.add_argument("--graph", required=True)
    p.add_argument("--max-steps", type=int, default=3, dest="max_steps")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_oracle_check)
    p = sub.add_parser("entangle-demo", help="trace the entangled construction for one (Z, l)")
    p.add_argument("--graph", default="cycle:n=6")
    p.add_argument("--y", type=_ints, default=[0])
    p.add_argument("--z", type=_ints, default=[3])
    p.add_argument("--Z", help="path as ';'-separated sites, e.g. 0;1;2")
    p.add_argument("--ell", help="switch labels, e.g. 1,2")
    p.add_argument("--steps", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_entangle_demo)
    p = sub.add_parser("fit", help="refit the decay exponent from a run directory")
    p.add_argument("--dir", required=True)
    p.add_argument("--window", type=_floats, required=True)
    p.add_argument("--bootstrap", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_fit)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except SpecError as exc:
        for d in exc.diagnostics:
            print(f"error: {d}", file=sys.stderr)
        return EXIT_SPEC
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SPEC


if __name__ == "__main__":
    sys.exit(main())
