"""Lattice trajectory search and chance-constrained planners.

The lattice planner is exact dynamic programming over (timestep, lattice
state) with the task horizon, so it is optimal with respect to the lattice.
Chance-constrained planning accumulates disjoint boxes of the belief support
one at a time (largest mass first) and asks the lattice planner to avoid the
union of their unsafe regions; the covered mass lower-bounds the probability
that the returned trajectory is safe.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .belief import Belief, prob_of
from .geometry import Box, BoxUnion, disjointify, intersect_unions, split_box, union_interior_contains
from .scenario import STRICT_TOL, ConstraintModel, Task, Trajectory, inner_unsafe_region, unsafe_region

log = logging.getLogger(__name__)

DEFAULT_BUDGET = 256


class InfeasiblePlan(RuntimeError):
    """No trajectory satisfies the requested constraints within the horizon."""


@dataclass(frozen=True)
class Lattice:
    """Lattice configuration.

    ``resolution`` is the position spacing. For double integrators the
    velocity spacing is ``resolution / dt`` and the control spacing
    ``resolution / dt**2``, which keeps every rollout on the lattice.
    ``max_cells`` caps how many cells (single integrator) or control
    increments (double integrator) one step may span.
    """

    resolution: float
    connectivity: str = "full"
    max_cells: int | None = None
    spacing: float | None = None

    def __post_init__(self):
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")
        if self.connectivity not in ("full", "axis"):
            raise ValueError("connectivity must be 'full' or 'axis'")

    @property
    def edge_spacing(self) -> float:
        return self.spacing if self.spacing is not None else self.resolution / 2.0

    @classmethod
    def default_for(cls, task: Task) -> "Lattice":
        if task.resolution is not None:
            return cls(task.resolution, task.connectivity)
        sb = task.dynamics.state_bounds
        extent = float(np.max(sb.hi[: task.dynamics.dim] - sb.lo[: task.dynamics.dim]))
        return cls(extent / 20.0, task.connectivity)


class LatticeGraph:
    """Lattice nodes, motion primitives and per-edge constraint samples."""

    def __init__(self, task: Task, model: ConstraintModel | None, lattice: Lattice):
        dyn = task.dynamics
        self.dyn = dyn
        self.model = model
        self.lattice = lattice
        r = lattice.resolution
        d = dyn.dim
        sb, cb = dyn.state_bounds, dyn.control_bounds
        origin = sb.lo[:d]
        npos = np.floor((sb.hi[:d] - origin) / r + 1e-9).astype(int) + 1
        axes = [np.arange(n) for n in npos]
        if dyn.kind == "single-integrator":
            ints = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
            values = origin + ints * r
            shape = tuple(npos)
            kmin = np.ceil(cb.lo * dyn.dt / r - 1e-9).astype(int)
            kmax = np.floor(cb.hi * dyn.dt / r + 1e-9).astype(int)
        else:
            q = r / dyn.dt
            jmin = np.ceil(sb.lo[d:] / q - 1e-9).astype(int)
            jmax = np.floor(sb.hi[d:] / q + 1e-9).astype(int)
            vaxes = [np.arange(a, b + 1) for a, b in zip(jmin, jmax)]
            grids = np.meshgrid(*(axes + vaxes), indexing="ij")
            ints = np.stack([g.ravel() for g in grids], axis=1)
            values = np.hstack([origin + ints[:, :d] * r, ints[:, d:] * q])
            shape = tuple(npos) + tuple(jmax - jmin + 1)
            self._jmin = jmin
            a = q / dyn.dt
            kmin = np.ceil(cb.lo / a - 1e-9).astype(int)
            kmax = np.floor(cb.hi / a + 1e-9).astype(int)
        if lattice.max_cells is not None:
            kmin = np.maximum(kmin, -lattice.max_cells)
            kmax = np.minimum(kmax, lattice.max_cells)
        moves = np.stack([g.ravel() for g in np.meshgrid(
            *[np.arange(a, b + 1) for a, b in zip(kmin, kmax)], indexing="ij")], axis=1)
        if lattice.connectivity == "axis":
            moves = moves[np.count_nonzero(moves, axis=1) <= 1]
        self.shape = shape
        self.ints = ints
        self.values = values
        self.moves = moves
        self.n_states = ints.shape[0]
        self._build_edges(task)

    # -- construction -------------------------------------------------------
    def _next_ints(self, k: np.ndarray) -> np.ndarray:
        d = self.dyn.dim
        if self.dyn.kind == "single-integrator":
            return self.ints + k
        nxt = self.ints.copy()
        nxt[:, :d] = self.ints[:, :d] + self.ints[:, d:]
        nxt[:, d:] = self.ints[:, d:] + k
        return nxt

    def _flat_index(self, ints: np.ndarray) -> np.ndarray:
        d = self.dyn.dim
        idx = ints.copy()
        if self.dyn.kind == "double-integrator":
            idx[:, d:] -= self._jmin
        ok = np.all((idx >= 0) & (idx < np.array(self.shape)), axis=1)
        out = np.full(ints.shape[0], -1, dtype=np.int64)
        out[ok] = np.ravel_multi_index(tuple(idx[ok].T), self.shape)
        return out

    def control_of(self, k) -> np.ndarray:
        r, dt = self.lattice.resolution, self.dyn.dt
        if self.dyn.kind == "single-integrator":
            return np.asarray(k) * r / dt
        return np.asarray(k) * r / dt ** 2

    def _build_edges(self, task: Task):
        dyn = self.dyn
        d = dyn.dim
        nM = len(self.moves)
        self.next = np.empty((self.n_states, nM), dtype=np.int64)
        self.controls = np.array([self.control_of(k) for k in self.moves])
        self.samples = []  # per move: (n_states, n_samples, kappa_dim)
        self.pos_samples = []
        static = np.ones((self.n_states, nM), dtype=bool)
        spacing = self.lattice.edge_spacing
        for j, k in enumerate(self.moves):
            nxt_ints = self._next_ints(k)
            self.next[:, j] = self._flat_index(nxt_ints)
            nxt_vals = self.values[np.maximum(self.next[:, j], 0)]
            live = self.next[:, j] >= 0
            step = np.max(np.abs(nxt_vals[live, :d] - self.values[live, :d])) if live.any() else 0.0
            ns = max(1, int(math.ceil(step / spacing - 1e-9)))
            alpha = np.linspace(0.0, 1.0, ns + 1)
            seg = self.values[:, None, :] * (1 - alpha[None, :, None]) + nxt_vals[:, None, :] * alpha[None, :, None]
            u = np.broadcast_to(self.controls[j], (seg.shape[0] * seg.shape[1], dyn.control_dim))
            flat = seg.reshape(-1, seg.shape[2])
            if self.model is not None:
                kap = self.model.kappa(flat, u).reshape(seg.shape[0], seg.shape[1], -1)
            else:
                kap = seg[:, :, :d]
            self.samples.append(kap)
            self.pos_samples.append(seg[:, :, :d])
            static[:, j] &= self.next[:, j] >= 0
            for b in task.known_unsafe:
                static[:, j] &= ~_hits(seg[:, :, :d], b)
        self.static_valid = static
        # padded per-edge samples (last sample repeated) and their bounding boxes
        smax = max(kap.shape[1] for kap in self.samples)
        pad = [np.concatenate([kap, np.repeat(kap[:, -1:], smax - kap.shape[1], axis=1)], axis=1)
               for kap in self.samples]
        self._flat_samples = np.stack(pad, axis=1).reshape(self.n_states * nM, smax, -1)
        self._edge_lo = self._flat_samples.min(axis=1)
        self._edge_hi = self._flat_samples.max(axis=1)
        self.mask_cache: dict = {}
        step_cost = np.empty((self.n_states, nM))
        for j in range(nM):
            if task.cost == "sum-squared-control":
                step_cost[:, j] = float(self.controls[j] @ self.controls[j])
            else:
                nxt_vals = self.values[np.maximum(self.next[:, j], 0)]
                step_cost[:, j] = np.linalg.norm(nxt_vals[:, :d] - self.values[:, :d], axis=1)
        self.step_cost = step_cost

    # -- queries --------------------------------------------------------------
    def blocked_by(self, region: BoxUnion | Box | list) -> np.ndarray:
        """Edges with a sample in the open interior of ``region``."""
        boxes = [region] if isinstance(region, Box) else list(region)
        nE = self.n_states * len(self.moves)
        if not boxes:
            return np.zeros((self.n_states, len(self.moves)), dtype=bool)
        lo = np.array([b.lo for b in boxes]) + STRICT_TOL
        hi = np.array([b.hi for b in boxes]) - STRICT_TOL
        out = np.zeros(nE, dtype=bool)
        near = np.zeros(nE, dtype=np.int64)
        for a, b in zip(lo, hi):
            cand = np.flatnonzero(~out & np.all((self._edge_hi > a) & (self._edge_lo < b), axis=1))
            if cand.size:
                out[cand] = _hits(self._flat_samples[cand], Box(a - STRICT_TOL, b + STRICT_TOL))
            near += np.all((self._edge_hi >= a - 2 * STRICT_TOL) & (self._edge_lo <= b + 2 * STRICT_TOL), axis=1)
        # samples on faces shared by several boxes can still be interior to the union
        cand = np.flatnonzero((near >= 2) & ~out)
        if cand.size:
            pts = self._flat_samples[cand]
            S, k = pts.shape[1], pts.shape[2]
            inside = union_interior_contains(BoxUnion(boxes, dim=k), pts.reshape(-1, k))
            out[cand] = inside.reshape(-1, S).any(axis=1)
        return out.reshape(self.n_states, len(self.moves))

    def nearest(self, x) -> int:
        x = np.asarray(x, dtype=float)
        dist = np.max(np.abs(self.values - x), axis=1)
        i = int(np.argmin(dist))
        if dist[i] > 1e-9:
            log.info("snapped state %s to lattice node %s", x.tolist(), self.values[i].tolist())
        return i

    def solve(self, start: int, goal: int, T: int, blocked: np.ndarray | None = None):
        """Backward dynamic program; returns node and move sequences or None."""
        valid = self.static_valid if blocked is None else self.static_valid & ~blocked
        nxt = np.maximum(self.next, 0)
        V = np.full(self.n_states, np.inf)
        V[goal] = 0.0
        # steps until the goal is reached for good; breaks cost ties toward early arrival
        A = np.zeros(self.n_states)
        rows = np.arange(self.n_states)
        settle = (rows == goal)[:, None] & (self.next == goal)
        choice = np.empty((T - 1, self.n_states), dtype=np.int64)
        for t in range(T - 2, -1, -1):
            cand = np.where(valid, self.step_cost + V[nxt], np.inf)
            best = cand.min(axis=1)
            arrive = np.where(settle & (A[nxt] == 0), 0.0, 1.0 + A[nxt])
            arrive = np.where(cand <= best[:, None] + 1e-9, arrive, np.inf)
            choice[t] = np.argmin(arrive, axis=1)
            V = cand[rows, choice[t]]
            A = arrive[rows, choice[t]]
        if not np.isfinite(V[start]):
            return None
        nodes = [start]
        moves = []
        s = start
        for t in range(T - 1):
            j = int(choice[t][s])
            moves.append(j)
            s = int(self.next[s, j])
            nodes.append(s)
        return nodes, moves, float(V[start])

    def trajectory(self, nodes, moves) -> Trajectory:
        return Trajectory(self.values[nodes], self.controls[moves])


def _hits(samples: np.ndarray, b: Box, tol: float = STRICT_TOL) -> np.ndarray:
    """Per-edge flag: does any sample lie strictly inside ``b``?"""
    inside = np.all((samples > b.lo + tol) & (samples < b.hi - tol), axis=-1)
    return inside.any(axis=-1)


_GRAPH_CACHE: dict = {}


def lattice_graph(task: Task, model: ConstraintModel | None, lattice: Lattice) -> LatticeGraph:
    key = (id(task.dynamics), id(task.known_unsafe), id(model), lattice, task.cost)
    hit = _GRAPH_CACHE.get(key)
    if hit is not None and hit[0] is task.dynamics and hit[1] is task.known_unsafe and hit[2] is model:
        return hit[3]
    graph = LatticeGraph(task, model, lattice)
    if len(_GRAPH_CACHE) > 32:
        _GRAPH_CACHE.clear()
    _GRAPH_CACHE[key] = (task.dynamics, task.known_unsafe, model, graph)
    return graph


def lattice_plan(task: Task, forbidden: BoxUnion | None, lattice: Lattice,
                 model: ConstraintModel | None = None) -> Trajectory:
    """Minimum-cost lattice trajectory avoiding ``forbidden`` and the known unsafe set.

    ``forbidden`` lives in the model's constraint space (or the workspace if
    no model is given). Raises :class:`InfeasiblePlan`.
    """
    graph = lattice_graph(task, model, lattice)
    blocked = graph.blocked_by(forbidden) if forbidden is not None and len(forbidden) else None
    sol = graph.solve(graph.nearest(task.x0), graph.nearest(task.xg), task.T, blocked)
    if sol is None:
        raise InfeasiblePlan("no lattice path reaches the goal within the horizon")
    return graph.trajectory(sol[0], sol[1])


# ------------------------------------------------------------------ plans


@dataclass
class Plan:
    traj: Trajectory
    chosen_boxes: list
    covered_prob: float
    cost: float
    epsilon_achieved: float
    variant: str = ""
    sampled_thetas: np.ndarray | None = None
    frontier: list = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {
            "variant": self.variant,
            "cost": self.cost,
            "covered_prob": self.covered_prob,
            "epsilon_achieved": self.epsilon_achieved,
            "chosen_boxes": [b.to_dict() for b in self.chosen_boxes],
            "states": self.traj.states.tolist(),
            "controls": self.traj.controls.tolist(),
        }
        if self.sampled_thetas is not None:
            out["sampled_thetas"] = np.asarray(self.sampled_thetas).tolist()
        return out


def belief_unsafe_region(belief: Belief, model: ConstraintModel) -> BoxUnion:
    """Constraint states unsafe for every parameter the belief still allows."""
    boxes = list(belief.support)
    if not boxes:
        return BoxUnion([], dim=model.kappa_dim)
    out = inner_unsafe_region(model, boxes[0])
    for b in boxes[1:]:
        if out.is_empty():
            break
        out = intersect_unions(out, inner_unsafe_region(model, b))
    return out


class _Greedy:
    """Shared machinery of the box-accumulating planners."""

    def __init__(self, belief: Belief, task: Task, model: ConstraintModel, lattice: Lattice,
                 budget: int, k_split: int, extra_forbidden: BoxUnion | None = None):
        self.belief = belief
        self.task = task
        self.model = model
        self.graph = lattice_graph(task, model, lattice)
        self.start = self.graph.nearest(task.x0)
        self.goal = self.graph.nearest(task.xg)
        self.budget = budget
        self.k_split = k_split
        forbid = list(belief_unsafe_region(belief, model)) if not belief.is_empty else []
        self.extra = self.graph.blocked_by(list(extra_forbidden)) if extra_forbidden is not None \
            else np.zeros_like(self.graph.static_valid)
        self.base = self.extra | self.graph.blocked_by(forbid)

    def solve(self, blocked):
        sol = self.graph.solve(self.start, self.goal, self.task.T, blocked)
        if sol is None:
            return None
        return self.graph.trajectory(sol[0], sol[1])

    def mask(self, box: Box) -> np.ndarray:
        key = (box.lo.tobytes(), box.hi.tobytes())
        cache = self.graph.mask_cache
        if key not in cache:
            if len(cache) > 4096:
                cache.clear()
            cache[key] = self.graph.blocked_by(unsafe_region(self.model, box))
        return cache[key]

    def run(self, stop_at: float | None):
        """Greedy accumulation; returns the frontier ``[(boxes, covered, traj)]``."""
        # the zero-coverage plan ignores the unknown constraint entirely
        traj = self.solve(self.extra)
        if traj is None:
            raise InfeasiblePlan("goal unreachable even ignoring the unknown constraint")
        chosen: list[Box] = []
        covered = 0.0
        frontier = [(list(chosen), covered, traj)]
        if stop_at is not None and covered >= stop_at - 1e-12:
            return frontier
        # every chosen box implies the common unsafe region, so start from it
        blocked = self.base.copy()
        if self.solve(blocked) is None:
            return frontier
        atoms = self.belief.atoms() if not self.belief.is_empty else []
        # blocked sets only grow, so a superset of an infeasible set stays infeasible
        dead: list[np.ndarray] = []
        for atom in atoms:
            if len(chosen) >= self.budget:
                break
            pieces = [atom]
            accepted_any = False
            for parts in range(1, self.k_split + 1):
                if parts > 1:
                    if accepted_any:
                        break
                    pieces = sorted(split_box(atom, parts), key=lambda b: (-b.volume(), tuple(b.lo.tolist())))
                for piece in pieces:
                    if len(chosen) >= self.budget:
                        break
                    trial = blocked | self.mask(piece)
                    if any(not (d & ~trial).any() for d in dead):
                        continue
                    t2 = self.solve(trial)
                    if t2 is None:
                        dead.append(trial)
                        continue
                    blocked, traj = trial, t2
                    chosen.append(piece)
                    covered += prob_of(self.belief, piece)
                    frontier.append((list(chosen), covered, traj))
                    accepted_any = True
                    if stop_at is not None and covered >= stop_at - 1e-12:
                        return frontier
                if parts == 1 and accepted_any:
                    break
        return frontier


def _make_plan(task: Task, entry, variant: str, frontier=None) -> Plan:
    boxes, covered, traj = entry
    covered = min(1.0, covered)
    return Plan(traj, boxes, covered, task.cost_value(traj.states, traj.controls),
                1.0 - covered, variant, frontier=frontier or [])


def plan_cc(belief: Belief, task: Task, model: ConstraintModel, eps: float,
            n_box_budget: int = DEFAULT_BUDGET, lattice: Lattice | None = None,
            k_split: int = 2, extra_forbidden: BoxUnion | None = None) -> Plan:
    """Plan whose covered probability is at least ``1 - eps``."""
    if not 0.0 <= eps <= 1.0:
        raise ValueError("eps must lie in [0, 1]")
    lattice = lattice or Lattice.default_for(task)
    g = _Greedy(belief, task, model, lattice, n_box_budget, k_split, extra_forbidden)
    frontier = g.run(stop_at=1.0 - eps)
    if frontier[-1][1] < 1.0 - eps - 1e-12:
        raise InfeasiblePlan(f"best covered probability {frontier[-1][1]:.4f} is below {1 - eps:.4f}")
    return _make_plan(task, frontier[-1], "cc", frontier)


def greedy_frontier(belief: Belief, task: Task, model: ConstraintModel,
                    n_box_budget: int = DEFAULT_BUDGET, lattice: Lattice | None = None,
                    k_split: int = 2, extra_forbidden: BoxUnion | None = None) -> list:
    lattice = lattice or Lattice.default_for(task)
    return _Greedy(belief, task, model, lattice, n_box_budget, k_split, extra_forbidden).run(None)


def plan_eps_min(belief: Belief, task: Task, model: ConstraintModel,
                 n_box_budget: int = DEFAULT_BUDGET, lattice: Lattice | None = None,
                 k_split: int = 2, extra_forbidden: BoxUnion | None = None) -> Plan:
    """Plan maximizing covered probability (ties go to lower cost)."""
    frontier = greedy_frontier(belief, task, model, n_box_budget, lattice, k_split, extra_forbidden)
    best = max(frontier, key=lambda e: (round(e[1], 12), -task.cost_value(e[2].states, e[2].controls)))
    return _make_plan(task, best, "epsmin", frontier)


def plan_ratio(belief: Belief, task: Task, model: ConstraintModel,
               n_box_budget: int = DEFAULT_BUDGET, lattice: Lattice | None = None,
               k_split: int = 2, extra_forbidden: BoxUnion | None = None) -> Plan:
    """Plan minimizing cost divided by covered probability over the greedy frontier."""
    frontier = greedy_frontier(belief, task, model, n_box_budget, lattice, k_split, extra_forbidden)
    usable = [e for e in frontier if e[1] > 0]
    if not usable:
        raise InfeasiblePlan("no plan covers positive probability")
    best = min(usable, key=lambda e: (task.cost_value(e[2].states, e[2].controls) / e[1], -e[1]))
    return _make_plan(task, best, "ratio", frontier)


def plan_guaranteed_safe(gsets, task: Task, model: ConstraintModel,
                         lattice: Lattice | None = None) -> Trajectory:
    """Plan that stays out of every possibly-unsafe and guaranteed-unsafe state."""
    lattice = lattice or Lattice.default_for(task)
    forbidden = BoxUnion(list(gsets.g_unsafe) + list(gsets.possibly_unsafe), dim=model.kappa_dim)
    return lattice_plan(task, forbidden, lattice, model)


def plan_scenario(belief: Belief, task: Task, model: ConstraintModel,
                  lattice: Lattice | None = None, seed=0, max_samples: int = 500) -> Plan:
    """Enforce sampled parameters one by one until planning becomes infeasible."""
    from .belief import sample_belief

    lattice = lattice or Lattice.default_for(task)
    graph = lattice_graph(task, model, lattice)
    start, goal = graph.nearest(task.x0), graph.nearest(task.xg)
    blocked = graph.blocked_by(belief_unsafe_region(belief, model)) if not belief.is_empty else None
    sol = graph.solve(start, goal, task.T, blocked)
    if sol is None:
        # no sampled parameter can be honored; fall back to ignoring the unknown constraint
        sol = graph.solve(start, goal, task.T, None)
        if sol is None:
            raise InfeasiblePlan("goal unreachable even ignoring the unknown constraint")
        traj = graph.trajectory(sol[0], sol[1])
        return Plan(traj, [], 0.0, task.cost_value(traj.states, traj.controls), 1.0, "scenario",
                    sampled_thetas=np.empty((0, model.theta_dim)))
    traj = graph.trajectory(sol[0], sol[1])
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    blocked = np.zeros_like(graph.static_valid) if blocked is None else blocked
    kept = []
    if not belief.is_empty:
        thetas = sample_belief(belief, max_samples, rng)
        for th in thetas:
            trial = blocked | graph.blocked_by(unsafe_region(model, Box(th, th)))
            s2 = graph.solve(start, goal, task.T, trial)
            if s2 is None:
                break
            blocked = trial
            traj = graph.trajectory(s2[0], s2[1])
            kept.append(th)
    return Plan(traj, [], 0.0, task.cost_value(traj.states, traj.controls), 1.0, "scenario",
                sampled_thetas=np.array(kept).reshape(-1, model.theta_dim))


def optimistic_forbidden(gsets, model: ConstraintModel, buffer: float = 0.5) -> BoxUnion:
    """Guaranteed-unsafe boxes inflated by ``buffer`` along their uncertain extents."""
    boxes = []
    everything = list(gsets.g_unsafe) + list(gsets.possibly_unsafe)
    if not everything:
        return BoxUnion([], dim=model.kappa_dim)
    reach = BoxUnion(everything, dim=model.kappa_dim).hull()
    for b in gsets.g_unsafe:
        lo, hi = b.lo.copy(), b.hi.copy()
        grow_lo = reach.lo < b.lo - 1e-12
        grow_hi = reach.hi > b.hi + 1e-12
        lo[grow_lo] -= buffer
        hi[grow_hi] += buffer
        boxes.append(Box(lo, hi))
    return disjointify(boxes, dim=model.kappa_dim) if boxes else BoxUnion([], dim=model.kappa_dim)


def plan_optimistic(gsets, task: Task, model: ConstraintModel, lattice: Lattice | None = None,
                    buffer: float = 0.5) -> Trajectory:
    lattice = lattice or Lattice.default_for(task)
    return lattice_plan(task, optimistic_forbidden(gsets, model, buffer), lattice, model)


def with_start(task: Task, x0) -> Task:
    return dataclasses.replace(task, x0=np.asarray(x0, dtype=float))
