"""Command-line front end: extract, plan, simulate, benchmark, plot, replay.

Every command writes a manifest next to its primary output recording the
argument vector, seed, tool version and the sha256 of each output file.
``artifact replay MANIFEST --check`` re-runs the command and compares.

Exit codes: 0 success, 1 runtime failure, 2 validation error,
3 infeasible planning problem.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .belief import Belief, belief_from_extraction, sample_belief
from .extraction import ENGINES, ExtractionError, GuaranteedSets, extract, guaranteed_sets
from .geometry import BoxUnion
from .planning import (
    InfeasiblePlan,
    Lattice,
    plan_cc,
    plan_eps_min,
    plan_guaranteed_safe,
    plan_optimistic,
    plan_ratio,
    plan_scenario,
)
from .policy import VARIANTS, PolicyConfig, PolicyTree, chain_masses, make_plan
from .sampled_planners import btp_plan, estimate_edge_safety, mcr_plan, read_roadmap
from .scenario import ScenarioError, Trajectory, read_scenario
from .sim import (
    SENSOR_KINDS,
    SensorSpec,
    benchmark,
    draw_ground_truth,
    histogram_csv,
    metrics_csv,
    run_episode,
    trial_seed,
    violation_histogram,
)

log = logging.getLogger("artifact")

EXIT_OK, EXIT_FAIL, EXIT_INVALID, EXIT_INFEASIBLE = 0, 1, 2, 3
PLAN_VARIANTS = ("cc", "epsmin", "ratio", "safe", "scenario", "optimistic", "mcr", "btp")


class UsageError(ValueError):
    """Bad flag combination detected after argument parsing."""


# ------------------------------------------------------------------ io helpers


def _dump_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _sibling(out: Path, suffix: str) -> Path:
    return out.with_name(out.stem + suffix)


def manifest_path(out: Path) -> Path:
    return out.with_name(out.name + ".manifest.json")


def write_manifest(args, argv: list[str], outputs: list[Path]) -> Path:
    flags = {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}
    man = {
        "command": args.command,
        "argv": list(argv),
        "scenario": getattr(args, "scenario", None),
        "flags": {k: (str(v) if isinstance(v, Path) else v) for k, v in flags.items()},
        "seed": getattr(args, "seed", None),
        "tool_version": __version__,
        "outputs": [{"path": str(p), "sha256": _sha256(p)} for p in outputs],
    }
    path = manifest_path(outputs[0])
    _dump_json(path, man)
    return path


def trajectory_csv(traj: Trajectory) -> str:
    lines = []
    n, m = traj.states.shape[1], traj.controls.shape[1]
    head = ["t"] + [f"x{i}" for i in range(n)] + [f"u{i}" for i in range(m)]
    lines.append(",".join(head))
    for t in range(traj.T):
        u = [repr(float(a)) for a in traj.controls[t]] if t < traj.T - 1 else [""] * m
        lines.append(",".join([str(t)] + [repr(float(a)) for a in traj.states[t]] + u))
    return "\n".join(lines) + "\n"


def boxes_csv(u: BoxUnion) -> str:
    """One row per member box: lower corner, upper corner, volume."""
    head = [f"lo{i}" for i in range(u.dim)] + [f"hi{i}" for i in range(u.dim)] + ["volume"]
    rows = [",".join(head)]
    for b in u:
        rows.append(",".join(repr(float(v)) for v in list(b.lo) + list(b.hi) + [b.volume()]))
    return "\n".join(rows) + "\n"


def _parse_floats(text: str, what: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")], dtype=float)
    except ValueError:
        raise UsageError(f"{what}: expected comma-separated numbers, got {text!r}") from None


def _belief_for(scenario, path: str | None):
    if path:
        boxes = BoxUnion.from_dict(json.loads(Path(path).read_text()))
        if boxes.dim != scenario.model.theta_dim:
            raise UsageError(f"--belief has dimension {boxes.dim}, model has {scenario.model.theta_dim}")
        return Belief(boxes)
    res = extract(scenario.demos, scenario.task, scenario.model)
    if res.is_empty():
        raise InfeasiblePlan("no parameter is consistent with the demonstrations")
    return belief_from_extraction(res)


def _lattice(scenario, args) -> Lattice:
    task = scenario.planning_task
    lat = Lattice.default_for(task)
    if getattr(args, "resolution", None):
        lat = Lattice(float(args.resolution), lat.connectivity)
    return lat


def _policy_config(args, variant: str) -> PolicyConfig:
    extra = {}
    if getattr(args, "samples", None) is not None:
        extra["n_samples"] = args.samples
    if getattr(args, "beta", None) is not None:
        extra["beta"] = args.beta
    if getattr(args, "buffer", None) is not None:
        extra["buffer"] = args.buffer
    if args.trigger == "on-unsafe-or-improve":
        extra["rho"] = args.rho
    return PolicyConfig(variant=variant, eps=args.eps, n_box_budget=args.nbox, seed=args.seed,
                        trigger=args.trigger, depth=args.depth, **extra)


# ------------------------------------------------------------------ commands


def cmd_extract(args) -> list[Path]:
    sc = read_scenario(args.scenario)
    res = extract(sc.demos, sc.task, sc.model, delta=args.delta, engine=args.engine)
    out = Path(args.out)
    _dump_json(out, res.to_dict())
    csv_path = _sibling(out, ".csv")
    _write_text(csv_path, boxes_csv(res.f_theta))
    outputs = [out, csv_path]
    if args.gsets:
        if res.is_empty():
            raise InfeasiblePlan("no parameter is consistent with the demonstrations")
        g = Path(args.gsets)
        _dump_json(g, guaranteed_sets(res, sc.model).to_dict())
        outputs.append(g)
    log.info("extracted %d boxes in %d iterations", len(res.f_theta), res.iterations)
    return outputs


def cmd_plan(args) -> list[Path]:
    sc = read_scenario(args.scenario)
    task, model = sc.planning_task, sc.model
    lat = _lattice(sc, args)
    belief = _belief_for(sc, args.belief)
    v = args.variant
    kw = dict(n_box_budget=args.nbox, lattice=lat)
    out = Path(args.out)
    if args.roadmap:
        return _plan_roadmap(args, sc, belief, out)
    if v in ("mcr", "btp"):
        plan = make_plan(belief, task, model, _policy_config(args, v), lat, seed=args.seed)
        traj, doc = plan.traj, plan.to_dict()
    elif v in ("safe", "optimistic"):
        gs = guaranteed_sets(belief.support, model)
        traj = plan_guaranteed_safe(gs, task, model, lat) if v == "safe" else \
            plan_optimistic(gs, task, model, lat, args.buffer)
        doc = {"variant": v, "cost": task.cost_value(traj.states, traj.controls),
               "states": traj.states.tolist(), "controls": traj.controls.tolist()}
    else:
        if v == "cc":
            plan = plan_cc(belief, task, model, args.eps, **kw)
        elif v == "epsmin":
            plan = plan_eps_min(belief, task, model, **kw)
        elif v == "ratio":
            plan = plan_ratio(belief, task, model, **kw)
        else:
            plan = plan_scenario(belief, task, model, lat, seed=args.seed)
        traj, doc = plan.traj, plan.to_dict()
    if args.contingencies:
        tree = PolicyTree(belief, task, model, _policy_config(args, v), lat)
        tree.expand(args.depth)
        doc["contingencies"] = _contingency_list(tree)
    _dump_json(out, doc)
    csv_path = _sibling(out, ".csv")
    _write_text(csv_path, trajectory_csv(traj))
    return [out, csv_path]


def _plan_roadmap(args, sc, belief: Belief, out: Path) -> list[Path]:
    """Plan on an explicit roadmap file; writes the vertex path."""
    if args.variant not in ("mcr", "btp"):
        raise UsageError("--roadmap needs --variant mcr or btp")
    rm = read_roadmap(args.roadmap)
    if rm.vertices.shape[1] != sc.model.kappa_dim:
        raise UsageError(f"--roadmap vertices have dimension {rm.vertices.shape[1]}, "
                         f"model expects {sc.model.kappa_dim}")
    thetas = sample_belief(belief, args.samples, args.seed)
    doc = {"variant": args.variant, "n_samples": int(args.samples)}
    if args.variant == "mcr":
        path, violated = mcr_plan(rm, thetas, sc.model)
        doc["violated"] = violated
    else:
        path = btp_plan(rm, estimate_edge_safety(rm, thetas, sc.model), args.beta)
        doc["beta"] = args.beta
    doc["path"] = path
    doc["cost"] = rm.path_cost(path)
    doc["states"] = rm.vertices[path].tolist()
    _dump_json(out, doc)
    csv_path = _sibling(out, ".csv")
    rows = ["step,vertex," + ",".join(f"k{i}" for i in range(rm.vertices.shape[1]))]
    for t, i in enumerate(path):
        rows.append(",".join([str(t), str(i)] + [repr(float(a)) for a in rm.vertices[i]]))
    _write_text(csv_path, "\n".join(rows) + "\n")
    return [out, csv_path]


def _contingency_list(tree: PolicyTree) -> list:
    out, stack = [], [tree.root]
    while stack:
        node = stack.pop()
        for k in sorted(node.children, reverse=True):
            c = node.children[k]
            if c.plan is not None:
                out.append({"depth": c.depth, "t0": c.t0, "states": c.plan.traj.states.tolist()})
            stack.append(c)
    return out


def _sensors(args) -> tuple:
    kinds = args.sensor or ["bump"]
    for k in kinds:
        if k not in SENSOR_KINDS:
            raise UsageError(f"--sensor: unknown kind {k!r}")
    if "bump" in kinds and "ambiguous-contact" in kinds:
        raise UsageError("--sensor: choose one contact sensor")
    return tuple(SensorSpec(k, range=args.lidar_range, n_points=args.contact_points) for k in kinds)


def cmd_simulate(args) -> list[Path]:
    sc = read_scenario(args.scenario)
    task, model = sc.planning_task, sc.model
    lat = _lattice(sc, args)
    belief = _belief_for(sc, args.belief)
    if args.trials < 1:
        raise UsageError("--trials must be at least 1")
    fixed = None
    if args.theta is not None:
        fixed = _parse_floats(args.theta, "--theta")
        if fixed.size != model.theta_dim:
            raise UsageError(f"--theta needs {model.theta_dim} entries")
    tree = PolicyTree(belief, task, model, _policy_config(args, args.variant), lat)
    sensors = _sensors(args)
    out = Path(args.out)
    outputs, episodes = [], []
    for k in range(args.trials):
        trial = args.trial + k
        seed = trial_seed(args.seed, trial)
        theta = fixed if fixed is not None else sample_belief(belief, 1, seed)[0]
        trace = run_episode(tree, theta, sensors, seed=seed)
        path = out if k == 0 else out.with_name(f"{out.stem}_trial{trial}{out.suffix}")
        _write_text(path, trace.to_csv(task.dynamics.state_dim, task.dynamics.control_dim))
        outputs.append(path)
        episodes.append(dict(trace.summary(), theta=theta.tolist(), trial=trial, trace=path.name))
    summary = _sibling(out, ".json")
    doc = dict(episodes[0], variant=args.variant)
    if args.trials > 1:
        doc["episodes"] = episodes
    _dump_json(summary, doc)
    return [out, summary] + outputs[1:]


def cmd_benchmark(args) -> list[Path]:
    sc = read_scenario(args.scenario)
    task, model = sc.planning_task, sc.model
    lat = _lattice(sc, args)
    belief = _belief_for(sc, args.belief)
    names = [p for p in args.policies.split(",") if p]
    for n in names:
        if n not in VARIANTS:
            raise UsageError(f"--policies: unknown policy {n!r}")
    if args.trials < 1:
        raise UsageError("--trials must be at least 1")
    pols = [(n, _policy_config(args, n)) for n in names]
    rows = benchmark(belief, task, model, pols, args.trials, seed=args.seed, lattice=lat,
                     sensors=_sensors(args))
    out = Path(args.out)
    _write_text(out, metrics_csv(rows))
    # histogram of the first policy, with the chain law when its contingencies are sequential
    masses = None
    try:
        tree = PolicyTree(belief, task, model, pols[0][1], lat)
        masses = chain_masses(tree, _thetas(belief, args))
    except (ValueError, InfeasiblePlan):
        masses = None
    hist = _sibling(out, "_hist.csv")
    _write_text(hist, histogram_csv(violation_histogram(rows[0].violations, masses)))
    return [out, hist]


def _thetas(belief: Belief, args) -> np.ndarray:
    return draw_ground_truth(belief, args.trials, args.seed)


def cmd_plot(args) -> list[Path]:
    sc = read_scenario(args.scenario) if args.scenario else None
    svg = render(sc, plans=args.plan or [], trace=args.trace, belief=args.belief, gsets=args.gsets)
    out = Path(args.out)
    _write_text(out, svg)
    return [out]


def cmd_replay(args) -> int:
    man = json.loads(Path(args.manifest).read_text())
    argv = man["argv"]
    code = main(argv, _replay=True)
    if code != EXIT_OK:
        return code
    if args.check:
        bad = [o["path"] for o in man["outputs"] if _sha256(Path(o["path"])) != o["sha256"]]
        for p in bad:
            print(f"mismatch: {p}", file=sys.stderr)
        return EXIT_FAIL if bad else EXIT_OK
    return EXIT_OK


# ------------------------------------------------------------------ svg

SVG_SIZE = 480
SVG_MARGIN = 40


def _fmt(v: float) -> str:
    return f"{v:.2f}"


class _Canvas:
    """World-to-pixel mapping with y pointing up."""

    def __init__(self, lo, hi):
        lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
        span = np.where(hi - lo > 0, hi - lo, 1.0)
        self.lo, self.hi, self.span = lo, lo + span, span
        self.inner = SVG_SIZE - 2 * SVG_MARGIN
        self.items: list[str] = []

    def px(self, p) -> tuple[float, float]:
        x = SVG_MARGIN + (p[0] - self.lo[0]) / self.span[0] * self.inner
        y = SVG_SIZE - SVG_MARGIN - (p[1] - self.lo[1]) / self.span[1] * self.inner
        return x, y

    def rect(self, lo, hi, cls: str) -> None:
        lo = np.maximum(lo, self.lo)
        hi = np.minimum(hi, self.hi)
        if np.any(hi <= lo):
            return
        x0, y1 = self.px(lo)
        x1, y0 = self.px(hi)
        self.items.append(f'<rect class="{cls}" x="{_fmt(x0)}" y="{_fmt(y0)}" '
                          f'width="{_fmt(x1 - x0)}" height="{_fmt(y1 - y0)}"/>')

    def polyline(self, pts, cls: str) -> None:
        if len(pts) == 0:
            return
        coords = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in (self.px(p) for p in pts))
        self.items.append(f'<polyline class="{cls}" points="{coords}"/>')

    def path(self, pts, cls: str) -> None:
        if len(pts) == 0:
            return
        xy = [self.px(p) for p in pts]
        d = "M" + " L".join(f"{_fmt(x)},{_fmt(y)}" for x, y in xy)
        self.items.append(f'<path class="{cls}" d="{d}"/>')

    def render(self, xlabel: str, ylabel: str) -> str:
        a, b = self.px(self.lo), self.px(self.hi)
        axes = [
            f'<rect class="frame" x="{_fmt(a[0])}" y="{_fmt(b[1])}" '
            f'width="{_fmt(b[0] - a[0])}" height="{_fmt(a[1] - b[1])}"/>',
            f'<text x="{_fmt(a[0])}" y="{_fmt(a[1] + 16)}">{_fmt(self.lo[0])}</text>',
            f'<text x="{_fmt(b[0])}" y="{_fmt(a[1] + 16)}" text-anchor="end">{_fmt(self.hi[0])}</text>',
            f'<text x="{_fmt(a[0] - 4)}" y="{_fmt(a[1])}" text-anchor="end">{_fmt(self.lo[1])}</text>',
            f'<text x="{_fmt(a[0] - 4)}" y="{_fmt(b[1] + 10)}" text-anchor="end">{_fmt(self.hi[1])}</text>',
            f'<text x="{_fmt((a[0] + b[0]) / 2)}" y="{_fmt(a[1] + 30)}" text-anchor="middle">{xlabel}</text>',
            f'<text x="12" y="{_fmt((a[1] + b[1]) / 2)}" text-anchor="middle">{ylabel}</text>',
        ]
        style = (".frame{fill:none;stroke:#000}.known{fill:#555}.gunsafe{fill:#d62728;opacity:.6}"
                 ".possibly{fill:#ff7f0e;opacity:.35}.demo{fill:none;stroke:#1f77b4;stroke-width:2}"
                 ".plan{fill:none;stroke:#2ca02c;stroke-width:2}"
                 ".contingency{fill:none;stroke:#2ca02c;stroke-dasharray:4 3}"
                 ".trace{fill:none;stroke:#9467bd;stroke-width:2}text{font:11px sans-serif}")
        body = "\n".join(axes + self.items)
        return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_SIZE}" height="{SVG_SIZE}" '
                f'viewBox="0 0 {SVG_SIZE} {SVG_SIZE}">\n<style>{style}</style>\n{body}\n</svg>\n')


def _read_trace_states(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) <= 1:
        return np.empty((0, 0))
    cols = [i for i, h in enumerate(rows[0]) if h.startswith("x")]
    return np.array([[float(r[i]) for i in cols] for r in rows[1:]], dtype=float)


def _position_dims(model) -> list[int] | None:
    """Constraint coordinates holding the workspace position, if any."""
    d = model.dynamics.dim
    for blk in model.blocks:
        if blk.phi in ("state-projection", "identity"):
            return list(range(blk.kappa_offset, blk.kappa_offset + d))
    return None


def render(sc, plans=(), trace=None, belief=None, gsets=None) -> str:
    """Deterministic SVG of a scenario and any plans, belief and trace given.

    Two-dimensional workspaces are drawn in the plane; other dimensions fall
    back to every state coordinate against time.
    """
    plan_docs = [json.loads(Path(p).read_text()) for p in plans]
    trace_states = _read_trace_states(trace) if trace else np.empty((0, 0))
    gs = GuaranteedSets.from_dict(json.loads(Path(gsets).read_text())) if gsets else None
    if gs is None and belief and sc is not None:
        support = BoxUnion.from_dict(json.loads(Path(belief).read_text()))
        if not support.is_empty():
            gs = guaranteed_sets(support, sc.model)
    dim = sc.task.dynamics.dim if sc is not None else 2
    if sc is not None and dim != 2:
        return _render_time(sc, plan_docs, trace_states)
    if sc is not None:
        sb = sc.task.dynamics.state_bounds
        canvas = _Canvas(sb.lo[:2], sb.hi[:2])
    else:
        pts = [np.asarray(d["states"])[:, :2] for d in plan_docs]
        if trace_states.size:
            pts.append(trace_states[:, :2])
        if pts:
            allp = np.vstack(pts)
            canvas = _Canvas(allp.min(axis=0), allp.max(axis=0))
        else:
            canvas = _Canvas([0.0, 0.0], [1.0, 1.0])
    if sc is not None:
        for b in sc.task.known_unsafe:
            canvas.rect(b.lo, b.hi, "known")
        dims = _position_dims(sc.model)
        if gs is not None and dims is not None:
            for b in gs.possibly_unsafe:
                canvas.rect(b.lo[dims], b.hi[dims], "possibly")
            for b in gs.g_unsafe:
                canvas.rect(b.lo[dims], b.hi[dims], "gunsafe")
        for demo in sc.demos:
            canvas.polyline(demo.states[:, :2], "demo")
    for d in plan_docs:
        canvas.path(np.asarray(d["states"])[:, :2], "plan")
        for c in d.get("contingencies", []):
            canvas.polyline(np.asarray(c["states"])[:, :2], "contingency")
    if trace_states.size:
        canvas.polyline(trace_states[:, :2], "trace")
    return canvas.render("x0", "x1")


def _render_time(sc, plan_docs, trace_states) -> str:
    sb = sc.task.dynamics.state_bounds
    T = max([sc.task.T, sc.planning_task.T] + [len(d["states"]) for d in plan_docs] + [len(trace_states)])
    canvas = _Canvas([0.0, float(np.min(sb.lo))], [float(T - 1), float(np.max(sb.hi))])

    def series(states, kind, draw):
        t = np.arange(len(states), dtype=float)
        for i in range(states.shape[1]):
            draw(np.column_stack([t, states[:, i]]), kind)

    for demo in sc.demos:
        series(demo.states, "demo", canvas.polyline)
    for d in plan_docs:
        series(np.asarray(d["states"]), "plan", canvas.path)
    if trace_states.size:
        series(trace_states, "trace", canvas.polyline)
    return canvas.render("t", "state")


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="artifact", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"artifact {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def shared(sp, scenario_required=True):
        sp.add_argument("--scenario", required=scenario_required, help="scenario JSON file")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", required=True, help="primary output file")
        sp.add_argument("--verbose", action="store_true")

    def planning(sp):
        sp.add_argument("--belief", help="BoxUnion JSON to use instead of extracting")
        sp.add_argument("--eps", type=float, default=0.1)
        sp.add_argument("--nbox", type=int, default=256)
        sp.add_argument("--resolution", type=float, help="lattice resolution override")
        sp.add_argument("--trigger", choices=("on-unsafe", "on-unsafe-or-improve"), default="on-unsafe")
        sp.add_argument("--depth", "--tree-depth", dest="depth", type=int, default=4,
                        help="contingency depth")
        sp.add_argument("--rho", type=float, default=1.5, help="improvement ratio for the improve trigger")
        sp.add_argument("--samples", type=int, default=30, help="parameter samples for mcr, btp, scenario")
        sp.add_argument("--beta", type=float, default=1.0, help="safety weight for btp")

    def sensing(sp):
        sp.add_argument("--sensor", action="append", choices=SENSOR_KINDS,
                        help="sensor kind; repeat to combine (default bump)")
        sp.add_argument("--lidar-range", type=float, default=2.0)
        sp.add_argument("--contact-points", type=int, default=300)

    sp = sub.add_parser("extract", help="consistent parameter set from demonstrations")
    shared(sp)
    sp.add_argument("--engine", choices=ENGINES, default="enumerate")
    sp.add_argument("--delta", type=float, help="KKT tolerance (defaults to the scenario's)")
    sp.add_argument("--gsets", help="also write guaranteed sets to this file")
    sp.set_defaults(func=cmd_extract)

    sp = sub.add_parser("plan", help="open-loop plan (JSON plus trajectory CSV)")
    shared(sp)
    planning(sp)
    sp.add_argument("--variant", choices=PLAN_VARIANTS, default="cc")
    sp.add_argument("--buffer", type=float, default=0.5, help="optimistic buffer")
    sp.add_argument("--contingencies", action="store_true", help="include contingency plans")
    sp.add_argument("--roadmap", help="roadmap JSON to plan on (mcr and btp only)")
    sp.set_defaults(func=cmd_plan)

    sp = sub.add_parser("simulate", help="one episode against a ground-truth parameter")
    shared(sp)
    planning(sp)
    sensing(sp)
    sp.add_argument("--variant", "--policy", dest="variant", choices=VARIANTS, default="epsmin")
    sp.add_argument("--buffer", type=float, default=0.5, help="optimistic buffer")
    sp.add_argument("--trials", type=int, default=1, help="consecutive trials starting at --trial")
    sp.add_argument("--theta", help="ground truth as comma-separated numbers")
    sp.add_argument("--trial", type=int, default=0, help="trial index for the drawn ground truth")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("benchmark", help="metrics table over ground-truth draws")
    shared(sp)
    planning(sp)
    sensing(sp)
    sp.add_argument("--policies", default="epsmin,scenario,optimistic")
    sp.add_argument("--trials", type=int, default=100)
    sp.set_defaults(func=cmd_benchmark)

    sp = sub.add_parser("plot", help="SVG of scenario, plans, belief and trace")
    shared(sp, scenario_required=False)
    sp.add_argument("--plan", action="append", help="plan JSON (repeatable)")
    sp.add_argument("--trace", help="trace CSV")
    sp.add_argument("--belief", help="BoxUnion JSON of the parameter set")
    sp.add_argument("--gsets", help="guaranteed sets JSON")
    sp.set_defaults(func=cmd_plot)

    sp = sub.add_parser("replay", help="re-run a command from its manifest")
    sp.add_argument("manifest")
    sp.add_argument("--check", action="store_true", help="compare output hashes")
    sp.add_argument("--verbose", action="store_true")
    sp.set_defaults(func=None)
    return p


def main(argv: list[str] | None = None, _replay: bool = False) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "replay":
            return cmd_replay(args)
        outputs = args.func(args)
        write_manifest(args, argv, outputs)
    except InfeasiblePlan as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ScenarioError, UsageError, FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ExtractionError as exc:
        print(f"extraction failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
