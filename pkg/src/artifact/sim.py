"""Ground-truth simulation: sensing, episodes and benchmark tables."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .belief import Belief, Measurement, sample_belief
from .planning import Lattice
from .policy import (
    Observation,
    PolicyConfig,
    PolicyRunner,
    PolicyTree,
    bump_observation,
    run_batch,
    step_cost,
    theoretical_override_law,
)
from .scenario import STRICT_TOL, ConstraintModel, Task

SENSOR_KINDS = ("bump", "lidar", "ambiguous-contact")


@dataclass(frozen=True)
class SensorSpec:
    """Sensor configuration.

    ``range`` and ``grid`` apply to lidar (grid spacing defaults to a tenth
    of the range); ``n_points`` and ``radius`` size the candidate set of an
    ambiguous contact.
    """

    kind: str = "bump"
    range: float = 2.0
    grid: float | None = None
    n_points: int = 300
    radius: float = 0.5

    def __post_init__(self):
        if self.kind not in SENSOR_KINDS:
            raise ValueError(f"unknown sensor {self.kind!r}; expected one of {SENSOR_KINDS}")
        if self.kind == "lidar" and not self.range > 0:
            raise ValueError("lidar range must be positive")
        if self.n_points < 1:
            raise ValueError("n_points must be at least 1")

    @property
    def spacing(self) -> float:
        return self.grid if self.grid is not None else self.range / 10.0


def _lidar_points(spec: SensorSpec, model: ConstraintModel, state, control) -> np.ndarray:
    dyn = model.dynamics
    d = dyn.dim
    pos = np.asarray(state, dtype=float)[:d]
    h = spec.spacing
    n = int(np.floor(spec.range / h + 1e-9))
    offs = np.arange(-n, n + 1) * h
    grid = np.stack([g.ravel() for g in np.meshgrid(*([offs] * d), indexing="ij")], axis=1)
    grid = grid[np.linalg.norm(grid, axis=1) <= spec.range + 1e-12]
    cand = pos + grid
    sb = dyn.state_bounds
    cand = cand[np.all((cand >= sb.lo[:d] - 1e-12) & (cand <= sb.hi[:d] + 1e-12), axis=1)]
    states = np.repeat(np.asarray(state, dtype=float)[None, :], cand.shape[0], axis=0)
    states[:, :d] = cand
    controls = np.repeat(np.asarray(control, dtype=float)[None, :], cand.shape[0], axis=0)
    return model.kappa(states, controls)


def sense(spec: SensorSpec, theta_star, model: ConstraintModel, points, rng=None,
          state=None, control=None):
    """Measurements produced by one sensor.

    ``points`` are the constraint-space samples of the attempted step (bump
    and contact sensors); lidar labels grid points around ``state``.
    Returns a tuple of measurements and the blocked sample index or ``None``.
    """
    theta_star = np.asarray(theta_star, dtype=float)
    if spec.kind == "lidar":
        pts = _lidar_points(spec, model, state, control)
        if pts.shape[0] == 0:
            return (), None
        bad = model.g(theta_star, pts) > STRICT_TOL
        out = []
        if (~bad).any():
            out.append(Measurement("exact-safe", pts[~bad]))
        if bad.any():
            out.append(Measurement("exact-unsafe", pts[bad]))
        return tuple(out), None
    points = np.atleast_2d(points)
    bad = model.g(theta_star, points) > STRICT_TOL
    j = int(np.argmax(bad)) if bad.any() else None
    if spec.kind == "bump" or j is None:
        return bump_observation(points, j), j
    rng = rng if rng is not None else np.random.default_rng(0)
    hit = points[j]
    k = hit.size
    dirs = rng.normal(size=(spec.n_points - 1, k))
    dirs /= np.maximum(np.linalg.norm(dirs, axis=1, keepdims=True), 1e-12)
    radii = spec.radius * rng.random((spec.n_points - 1, 1)) ** (1.0 / k)
    kb = model.kappa_bounds
    decoys = np.clip(hit + dirs * radii, kb.lo, kb.hi)
    cand = np.vstack([hit[None, :], decoys])
    out = []
    if j > 0:
        out.append(Measurement("exact-safe", points[:j]))
    out.append(Measurement("ambiguous-unsafe", cand))
    return tuple(out), j


@dataclass
class ExecutionTrace:
    states: list = field(default_factory=list)
    controls: list = field(default_factory=list)
    events: list = field(default_factory=list)
    violation_flags: list = field(default_factory=list)
    violation_points: list = field(default_factory=list)
    switches: int = 0
    cost: float = 0.0
    reached_goal: bool = False
    failure: str = ""

    @property
    def violations(self) -> int:
        return len(self.violation_points)

    def to_csv(self, state_dim: int, control_dim: int) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step"] + [f"x{i}" for i in range(state_dim)] + [f"u{i}" for i in range(control_dim)]
                   + ["event", "violation_flag"])
        for k, (x, u, ev, v) in enumerate(zip(self.states, self.controls, self.events, self.violation_flags)):
            w.writerow([k] + [repr(float(a)) for a in x] + [repr(float(a)) for a in u] + [ev, int(v)])
        return buf.getvalue()

    def summary(self) -> dict:
        return {"violations": self.violations, "switches": self.switches, "cost": self.cost,
                "reached_goal": self.reached_goal, "failure": self.failure}


def run_episode(tree: PolicyTree, theta_star, sensors=(SensorSpec(),), seed=0,
                max_steps: int | None = None) -> ExecutionTrace:
    """Execute the policy against ground truth ``theta_star``.

    Motion stops at the first unsafe sample of a step; the robot stays at
    the step's start, the violation is counted once and the contact sensor
    reports it. Sensor randomness comes from ``seed``.
    """
    theta_star = np.asarray(theta_star, dtype=float)
    sensors = tuple(sensors)
    contact = next((s for s in sensors if s.kind in ("bump", "ambiguous-contact")), SensorSpec("bump"))
    ranged = [s for s in sensors if s.kind == "lidar"]
    rng = np.random.default_rng(seed)
    task, model = tree.task, tree.model
    runner = PolicyRunner(tree)
    trace = ExecutionTrace()
    max_steps = max_steps or 10 * task.T * (tree.config.max_switches + 1)
    res = runner.step(None)
    n = 0
    while res.kind in ("control", "switch") and n < max_steps:
        n += 1
        x, u = runner.state.copy(), runner.control.copy()
        pts = runner.step_points()
        meas, j = sense(contact, theta_star, model, pts, rng)
        traj, t = runner.node.plan.traj, runner.t
        trace.cost += step_cost(task, traj, t)
        trace.states.append(x)
        trace.controls.append(u)
        trace.violation_flags.append(j is not None)
        if j is not None:
            trace.violation_points.append(pts[j].copy())
            trace.events.append("violation")
        else:
            trace.events.append("switch" if res.kind == "switch" else "move")
            nxt = traj.states[t + 1]
            for s in ranged:
                extra, _ = sense(s, theta_star, model, None, rng, state=nxt, control=u)
                meas = meas + extra
        res = runner.step(Observation(tuple(meas), j))
        if res.kind == "switch":
            trace.switches += 1
    if res.kind == "failure":
        trace.failure = res.detail
    elif res.kind != "done":
        trace.failure = "step-limit"
    final = runner.node.plan.traj.states[runner.t] if runner.node.plan is not None else trace.states[-1]
    trace.states.append(np.asarray(final).copy())
    trace.controls.append(np.zeros(task.dynamics.control_dim))
    trace.events.append("done" if not trace.failure else "failure")
    trace.violation_flags.append(False)
    trace.reached_goal = not trace.failure and bool(np.allclose(final, task.xg, atol=1e-6))
    return trace


def trial_seed(seed: int, trial: int) -> int:
    """Per-trial seed: the run seed XOR the trial index."""
    return int(seed) ^ int(trial)


def draw_ground_truth(belief: Belief, n_trials: int, seed: int) -> np.ndarray:
    """One parameter per trial, each from its own trial-seeded generator."""
    return np.vstack([sample_belief(belief, 1, trial_seed(seed, i)) for i in range(n_trials)])


@dataclass
class BenchmarkRow:
    policy: str
    mean_viol: float
    std_viol: float
    mean_cost: float
    success_rate: float
    violations: np.ndarray

    def as_list(self) -> list:
        return [self.policy, self.mean_viol, self.std_viol, self.mean_cost, self.success_rate]


def benchmark(belief: Belief, task: Task, model: ConstraintModel, policies, n_trials: int, seed: int = 0,
              lattice: Lattice | None = None, sensors=(SensorSpec(),), thetas=None) -> list[BenchmarkRow]:
    """Mean and spread of violations, cost and success per policy.

    Every policy faces the same ground-truth draws. With contact-only
    sensing episodes run through the vectorized batch executor.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    thetas = draw_ground_truth(belief, n_trials, seed) if thetas is None else np.atleast_2d(thetas)
    rows = []
    for name, cfg in policies:
        cfg = cfg if isinstance(cfg, PolicyConfig) else PolicyConfig(**cfg)
        tree = PolicyTree(belief, task, model, cfg, lattice)
        if all(s.kind == "bump" for s in sensors):
            out = run_batch(tree, thetas)
            v, c, r = out["violations"], out["cost"], out["reached"]
        else:
            traces = [run_episode(tree, th, sensors, trial_seed(seed, i)) for i, th in enumerate(thetas)]
            v = np.array([tr.violations for tr in traces])
            c = np.array([tr.cost for tr in traces])
            r = np.array([tr.reached_goal for tr in traces])
        rows.append(BenchmarkRow(name, float(v.mean()), float(v.std()), float(c.mean()), float(r.mean()), v))
    return rows


def metrics_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["policy", "mean_viol", "std_viol", "mean_cost", "success_rate"])
    for r in rows:
        w.writerow([r.policy] + [f"{x:.6f}" for x in r.as_list()[1:]])
    return buf.getvalue()


def violation_histogram(violations, masses=None) -> list[tuple[int, float, float | None]]:
    """Empirical frequency of each violation count, with the chain law alongside."""
    v = np.asarray(violations, dtype=int)
    top = int(v.max()) if v.size else 0
    law = theoretical_override_law(masses) if masses is not None else None
    if law is not None:
        top = max(top, law.size - 1)
    out = []
    for k in range(top + 1):
        emp = float(np.mean(v == k)) if v.size else 0.0
        theo = None if law is None else float(law[k]) if k < law.size else 0.0
        out.append((k, emp, theo))
    return out


def histogram_csv(hist) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["count", "empirical_freq", "theoretical_freq"])
    for k, e, t in hist:
        w.writerow([k, f"{e:.6f}", "" if t is None else f"{t:.6f}"])
    return buf.getvalue()
