"""Receding-horizon execution with belief updates and contingency plans.

A :class:`PolicyTree` stores the plan for the current belief and, below it,
the replanned contingencies keyed by what was observed: the step and sample
point at which motion was blocked plus a digest of every measurement taken
since the plan started. Children are computed on first use and cached, so
executing against a tree and replanning online are the same computation;
:meth:`PolicyTree.expand` fills in every bump outcome ahead of time.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field

import numpy as np

from .belief import Belief, Measurement, prob_of, safe_mass, sample_belief, update_many
from .extraction import guaranteed_sets
from .planning import (
    DEFAULT_BUDGET,
    InfeasiblePlan,
    Lattice,
    Plan,
    lattice_graph,
    plan_cc,
    plan_eps_min,
    plan_guaranteed_safe,
    plan_optimistic,
    plan_ratio,
    plan_scenario,
    with_start,
)
from .scenario import STRICT_TOL, ConstraintModel, Task, Trajectory, path_points

VARIANTS = ("epsmin", "ratio", "cc", "safe", "scenario", "optimistic", "mcr", "btp")
TRIGGERS = ("on-unsafe", "on-unsafe-or-improve")
HORIZONS = ("full", "remaining")


@dataclass(frozen=True)
class PolicyConfig:
    """Planner choice and replanning behaviour.

    ``depth`` bounds how far :meth:`PolicyTree.expand` precomputes;
    execution past it replans on demand. ``horizon="full"`` gives every
    replan the task horizon, ``"remaining"`` only the steps left.
    """

    variant: str = "epsmin"
    trigger: str = "on-unsafe"
    rho: float | None = None
    depth: int = 4
    eps: float = 0.1
    n_box_budget: int = DEFAULT_BUDGET
    k_split: int = 2
    buffer: float = 0.5
    n_samples: int = 30
    beta: float = 1.0
    linear_btp: bool = False
    spacing: float | None = None
    max_switches: int = 50
    horizon: str = "full"
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.trigger not in TRIGGERS:
            raise ValueError(f"unknown trigger {self.trigger!r}")
        if self.trigger == "on-unsafe-or-improve" and (self.rho is None or not self.rho > 1):
            raise ValueError("the improve trigger needs rho > 1")
        if self.depth < 0:
            raise ValueError("depth must be nonnegative")
        if self.horizon not in HORIZONS:
            raise ValueError(f"horizon must be one of {HORIZONS}")
        if not 0.0 <= self.eps <= 1.0:
            raise ValueError("eps must lie in [0, 1]")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _derive_seed(*parts) -> int:
    h = hashlib.sha256(repr(parts).encode()).digest()
    return int.from_bytes(h[:8], "little")


def measurement_digest(measurements) -> str:
    h = hashlib.sha256()
    for m in measurements:
        h.update(m.kind.encode())
        h.update(np.ascontiguousarray(m.points).tobytes())
    return h.hexdigest()[:16]


def step_cost(task: Task, traj: Trajectory, t: int) -> float:
    return task.cost_value(traj.states[t:t + 2], traj.controls[t:t + 1])


# ------------------------------------------------------------------ plans


def _lattice_roadmap_plan(belief: Belief, task: Task, model: ConstraintModel, config: PolicyConfig,
                          lattice: Lattice, seed: int) -> Plan:
    """Plan with a sampled-constraint graph planner on the lattice graph."""
    from .sampled_planners import Roadmap, btp_plan, estimate_edge_safety, mcr_plan

    if task.dynamics.kind != "single-integrator" or any(b.phi == "control-norm-squared" for b in model.blocks):
        raise ValueError("roadmap policies need a single integrator and a spatial constraint model")
    graph = lattice_graph(task, model, lattice)
    d = task.dynamics.dim
    seen = {}
    for s in range(graph.n_states):
        for j in np.flatnonzero(graph.static_valid[s]):
            n = int(graph.next[s, j])
            if n == s:
                continue
            key = (min(s, n), max(s, n))
            c = float(graph.step_cost[s, j])
            if key not in seen or c < seen[key]:
                seen[key] = c
    edges = [(a, b, c) for (a, b), c in sorted(seen.items())]
    kap = model.kappa(graph.values, np.zeros((graph.n_states, task.dynamics.control_dim)))
    roadmap = Roadmap(kap, edges, graph.nearest(task.x0), graph.nearest(task.xg))
    thetas = sample_belief(belief, config.n_samples, seed)
    spacing = lattice.edge_spacing
    if config.variant == "mcr":
        path, _ = mcr_plan(roadmap, thetas, model, spacing)
    else:
        beliefs = estimate_edge_safety(roadmap, thetas, model, spacing)
        path = btp_plan(roadmap, beliefs, config.beta, config.linear_btp)
    if len(path) > task.T:
        raise InfeasiblePlan("roadmap path is longer than the horizon")
    path = path + [path[-1]] * (task.T - len(path))
    states = graph.values[path]
    controls = np.diff(states[:, :d], axis=0) / task.dynamics.dt
    traj = Trajectory(states, controls)
    return Plan(traj, [], 0.0, task.cost_value(states, controls), 1.0, config.variant)


def make_plan(belief: Belief, task: Task, model: ConstraintModel, config: PolicyConfig,
              lattice: Lattice | None = None, seed: int = 0) -> Plan:
    """Open-loop plan from the configured planner."""
    lattice = lattice or Lattice.default_for(task)
    v = config.variant
    kw = dict(n_box_budget=config.n_box_budget, lattice=lattice, k_split=config.k_split)
    if v == "epsmin":
        return plan_eps_min(belief, task, model, **kw)
    if v == "ratio":
        return plan_ratio(belief, task, model, **kw)
    if v == "cc":
        return plan_cc(belief, task, model, config.eps, **kw)
    if v == "scenario":
        return plan_scenario(belief, task, model, lattice, seed=seed, max_samples=config.n_samples)
    if v in ("safe", "optimistic"):
        gs = guaranteed_sets(belief.support, model)
        if v == "safe":
            traj = plan_guaranteed_safe(gs, task, model, lattice)
            atoms = belief.atoms()
            covered = min(1.0, sum(prob_of(belief, b) for b in atoms))
            return Plan(traj, atoms, covered, task.cost_value(traj.states, traj.controls), 1.0 - covered, v)
        traj = plan_optimistic(gs, task, model, lattice, config.buffer)
        return Plan(traj, [], 0.0, task.cost_value(traj.states, traj.controls), 1.0, v)
    return _lattice_roadmap_plan(belief, task, model, config, lattice, seed)


# ------------------------------------------------------------------ tree


@dataclass
class PolicyNode:
    """One plan of the contingency structure.

    ``status`` is ``"plan"``, ``"empty"`` (observations contradict every
    parameter) or ``"infeasible"`` (no replan exists).
    """

    belief: Belief
    plan: Plan | None
    status: str
    depth: int
    t0: int
    key: tuple
    children: dict = field(default_factory=dict)
    points: list | None = None

    @property
    def is_terminal(self) -> bool:
        return self.status != "plan"

    @property
    def n_steps(self) -> int:
        return 0 if self.plan is None else self.plan.traj.T - 1


def bump_observation(points: np.ndarray, j: int | None) -> tuple:
    """Measurements from a contact sensor along one step's sample points."""
    if j is None:
        return (Measurement("exact-safe", points),)
    out = []
    if j > 0:
        out.append(Measurement("exact-safe", points[:j]))
    out.append(Measurement("exact-unsafe", points[j:j + 1]))
    return tuple(out)


class PolicyTree:
    """Plans keyed by observation history, computed on demand and cached.

    With ``cache=False`` every contingency is recomputed, which is plain
    online replanning.
    """

    def __init__(self, belief: Belief, task: Task, model: ConstraintModel,
                 config: PolicyConfig | None = None, lattice: Lattice | None = None, cache: bool = True):
        self.task = task
        self.model = model
        self.config = config or PolicyConfig()
        self.lattice = lattice or Lattice.default_for(task)
        self.spacing = self.config.spacing or self.lattice.edge_spacing
        self.cache = cache
        self.n_plans = 0
        self.root = self._node(belief, task.x0, depth=0, t0=0, key=())
        if self.root.is_terminal:
            raise InfeasiblePlan("the root planner found no plan")

    def _node(self, belief: Belief, x0, depth: int, t0: int, key: tuple) -> PolicyNode:
        if belief.is_empty:
            return PolicyNode(belief, None, "empty", depth, t0, key)
        task = with_start(self.task, x0)
        if self.config.horizon == "remaining":
            remaining = self.task.T - t0
            if remaining < 2:
                return PolicyNode(belief, None, "infeasible", depth, t0, key)
            task = dataclasses.replace(task, T=remaining)
        try:
            plan = make_plan(belief, task, self.model, self.config, self.lattice,
                             seed=_derive_seed(self.config.seed, key))
        except InfeasiblePlan:
            return PolicyNode(belief, None, "infeasible", depth, t0, key)
        self.n_plans += 1
        return PolicyNode(belief, plan, "plan", depth, t0, key)

    def step_points(self, node: PolicyNode) -> list[np.ndarray]:
        """Constraint-space sample points of each plan step."""
        if node.points is None:
            pts, idx = path_points(self.model, node.plan.traj, self.spacing)
            node.points = [pts[idx == t] for t in range(node.n_steps)]
        return node.points

    def child(self, node: PolicyNode, t: int, j: int, measurements) -> PolicyNode:
        """Contingency after observing ``measurements`` and stopping at step ``t``.

        ``j`` is the blocked sample index, ``-1`` for a sensing-triggered
        switch and ``-2`` for an improvement switch.
        """
        key = (t, j, measurement_digest(measurements))
        hit = node.children.get(key)
        if hit is not None:
            return hit
        belief = update_many(node.belief, measurements, self.model)
        x = node.plan.traj.states[t]
        out = self._node(belief, x, node.depth + 1, node.t0 + t, node.key + (key,))
        if self.cache:
            node.children[key] = out
        return out

    def bump_history(self, node: PolicyNode, t: int, j: int) -> list:
        """Measurements a contact sensor yields when blocked at sample ``j`` of step ``t``."""
        pts = self.step_points(node)
        hist = []
        for s in range(t):
            hist.extend(bump_observation(pts[s], None))
        hist.extend(bump_observation(pts[t], j))
        return hist

    def possible_blocks(self, node: PolicyNode) -> list[tuple[int, int]]:
        """Bump outcomes with positive probability under the node's belief."""
        pts = self.step_points(node)
        out = []
        b = node.belief
        for t, p in enumerate(pts):
            for j in range(p.shape[0]):
                if safe_mass(b.support, p[j:j + 1], self.model) < b.total_volume * (1 - 1e-12):
                    out.append((t, j))
        return out

    def expand(self, depth: int | None = None) -> int:
        """Precompute contingencies for every bump outcome down to ``depth``.

        Returns the number of nodes in the tree.
        """
        depth = self.config.depth if depth is None else depth
        frontier = [self.root]
        while frontier:
            node = frontier.pop()
            if node.is_terminal or node.depth >= depth:
                continue
            for t, j in self.possible_blocks(node):
                c = self.child(node, t, j, self.bump_history(node, t, j))
                if c.belief.is_empty:
                    continue
                frontier.append(c)
        return self.size()

    def size(self) -> int:
        count, stack = 0, [self.root]
        while stack:
            n = stack.pop()
            count += 1
            stack.extend(n.children[k] for k in sorted(n.children))
        return count

    def to_dict(self) -> dict:
        def enc(node: PolicyNode) -> dict:
            out = {"status": node.status, "depth": node.depth, "t0": node.t0}
            if node.plan is not None:
                out["plan"] = node.plan.to_dict()
            out["children"] = [
                {"step": k[0], "sample": k[1], "digest": k[2], "node": enc(node.children[k])}
                for k in sorted(node.children)
            ]
            return out

        return {"config": self.config.to_dict(), "root": enc(self.root)}


def build_tree(belief: Belief, task: Task, config: PolicyConfig, model: ConstraintModel,
               lattice: Lattice | None = None) -> PolicyTree:
    tree = PolicyTree(belief, task, model, config, lattice)
    tree.expand(config.depth)
    return tree


# ------------------------------------------------------------------ runtime


@dataclass(frozen=True)
class Observation:
    """Measurements gathered while attempting one step.

    ``blocked_at`` is the index of the sample point where motion stopped,
    or ``None`` if the step completed.
    """

    measurements: tuple = ()
    blocked_at: int | None = None


@dataclass(frozen=True)
class StepResult:
    kind: str
    control: np.ndarray | None = None
    detail: str = ""


class PolicyRunner:
    """Executes a policy one step at a time."""

    def __init__(self, tree: PolicyTree):
        self.tree = tree
        self.node = tree.root
        self.t = 0
        self.pending: list = []
        self.switches = 0
        self.finished = False

    @property
    def state(self) -> np.ndarray:
        return self.node.plan.traj.states[self.t]

    @property
    def control(self) -> np.ndarray:
        return self.node.plan.traj.controls[self.t]

    def step_points(self) -> np.ndarray:
        return self.tree.step_points(self.node)[self.t]

    def _switch(self, j: int) -> StepResult:
        child = self.tree.child(self.node, self.t, j, self.pending)
        self.switches += 1
        if child.is_terminal:
            self.finished = True
            reason = "empty-belief" if child.status == "empty" else "no-feasible-replan"
            return StepResult("failure", None, reason)
        if self.switches > self.tree.config.max_switches:
            self.finished = True
            return StepResult("failure", None, "switch-limit")
        self.node, self.t, self.pending = child, 0, []
        if self.node.n_steps == 0:
            self.finished = True
            return StepResult("done", None, "switch")
        return StepResult("switch", self.control, f"depth {child.depth}")

    def _remaining_doomed(self, belief: Belief) -> bool:
        """Does the rest of the plan cross a point unsafe for every remaining parameter?"""
        if belief.is_empty:
            return True
        pts = self.tree.step_points(self.node)[self.t:]
        for p in pts:
            for row in p:
                if safe_mass(belief.support, row[None, :], self.tree.model) <= 0.0:
                    return True
        return False

    def step(self, obs: Observation | None = None) -> StepResult:
        """Consume the observation of the last attempted step, return the next action."""
        if self.finished:
            raise RuntimeError("execution already terminated")
        if obs is None:
            if self.node.n_steps == 0:
                self.finished = True
                return StepResult("done")
            return StepResult("control", self.control)
        self.pending.extend(obs.measurements)
        if obs.blocked_at is not None:
            return self._switch(int(obs.blocked_at))
        self.t += 1
        if self.t >= self.node.n_steps:
            self.finished = True
            return StepResult("done")
        cfg = self.tree.config
        if any(m.kind != "exact-safe" for m in obs.measurements):
            belief = update_many(self.node.belief, self.pending, self.tree.model)
            if self._remaining_doomed(belief):
                return self._switch(-1)
        if cfg.trigger == "on-unsafe-or-improve":
            belief = update_many(self.node.belief, self.pending, self.tree.model)
            if not belief.is_empty:
                task = with_start(self.tree.task, self.state)
                try:
                    alt = make_plan(belief, task, self.tree.model, cfg, self.tree.lattice,
                                    seed=_derive_seed(cfg.seed, self.node.key, self.t))
                except InfeasiblePlan:
                    alt = None
                traj = self.node.plan.traj
                left = sum(step_cost(self.tree.task, traj, s) for s in range(self.t, self.node.n_steps))
                if alt is not None and alt.cost * cfg.rho < left:
                    return self._switch(-2)
        return StepResult("control", self.control)


# ------------------------------------------------------------------ batch execution


def run_batch(tree: PolicyTree, thetas) -> dict:
    """Vectorized bump-sensing execution of many ground-truth parameters.

    Equivalent to running :func:`artifact.sim.run_episode` with a contact
    sensor for each parameter, but groups parameters by outcome so every
    node is visited once.
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    N = thetas.shape[0]
    violations = np.zeros(N, dtype=int)
    cost = np.zeros(N)
    reached = np.zeros(N, dtype=bool)
    model, task = tree.model, tree.task
    stack = [(tree.root, np.arange(N), 0)]
    goal = task.xg
    while stack:
        node, idx, switches = stack.pop()
        if node.is_terminal or idx.size == 0:
            continue
        pts = tree.step_points(node)
        traj = node.plan.traj
        costs = np.array([step_cost(task, traj, s) for s in range(node.n_steps)])
        flat = np.vstack(pts) if pts else np.zeros((0, model.kappa_dim))
        step_of = np.concatenate([np.full(p.shape[0], s) for s, p in enumerate(pts)]) if pts else np.zeros(0, int)
        first_in = np.concatenate([np.arange(p.shape[0]) for p in pts]) if pts else np.zeros(0, int)
        if flat.shape[0]:
            bad = model.g_many(thetas[idx], flat) > STRICT_TOL
            any_bad = bad.any(axis=1)
            first = np.argmax(bad, axis=1)
        else:
            any_bad = np.zeros(idx.size, dtype=bool)
            first = np.zeros(idx.size, dtype=int)
        ok = idx[~any_bad]
        cost[ok] += costs.sum()
        reached[ok] = np.allclose(traj.states[-1], goal, atol=1e-6)
        hit = idx[any_bad]
        pos = first[any_bad]
        violations[hit] += 1
        groups: dict = {}
        for i, p in zip(hit, pos):
            groups.setdefault(int(p), []).append(i)
        for p, members in sorted(groups.items()):
            t, j = int(step_of[p]), int(first_in[p])
            members = np.array(members)
            cost[members] += costs[:t + 1].sum()
            if switches + 1 > tree.config.max_switches:
                continue
            child = tree.child(node, t, j, tree.bump_history(node, t, j))
            stack.append((child, members, switches + 1))
    return {"violations": violations, "cost": cost, "reached": reached}


def theoretical_override_law(p) -> np.ndarray:
    """Distribution of override counts for a chain of plan masses.

    Entry ``i < len(p)`` is the probability of exactly ``i`` overrides; the
    last entry is the mass left after every plan in the chain failed.
    """
    p = np.asarray(p, dtype=float).reshape(-1)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("masses must lie in [0, 1]")
    out = np.empty(p.size + 1)
    survive = 1.0
    for i, pi in enumerate(p):
        out[i] = survive * pi
        survive *= 1.0 - pi
    out[-1] = survive
    return out


def _chains(tree: PolicyTree, node: PolicyNode, thetas: np.ndarray) -> set:
    if node.is_terminal or thetas.shape[0] == 0:
        return {()}
    m = round(node.plan.covered_prob, 9)
    pts = tree.step_points(node)
    flat = np.vstack(pts)
    bad = tree.model.g_many(thetas, flat) > STRICT_TOL
    fails = bad.any(axis=1)
    if not fails.any():
        return {(m,)}
    step_of = np.concatenate([np.full(p.shape[0], s) for s, p in enumerate(pts)])
    first_in = np.concatenate([np.arange(p.shape[0]) for p in pts])
    first = np.argmax(bad, axis=1)
    out = set()
    for f in np.unique(first[fails]):
        t, j = int(step_of[f]), int(first_in[f])
        child = tree.child(node, t, j, tree.bump_history(node, t, j))
        group = thetas[fails & (first == f)]
        out |= {(m,) + rest for rest in _chains(tree, child, group)}
    return out


def chain_masses(tree: PolicyTree, thetas) -> list[float]:
    """Covered masses along the chain of plans followed while every plan fails.

    Branches are explored with the given ground-truth samples. Raises
    ``ValueError`` unless every branch yields the same mass sequence, i.e.
    the contingencies are purely sequential.
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    seqs = _chains(tree, tree.root, thetas)
    longest = max(seqs, key=len)
    for s in seqs:
        if s != longest[:len(s)]:
            raise ValueError("contingencies are not purely sequential")
    return list(longest)
