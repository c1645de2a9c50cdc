"""Tasks, dynamics, the offset-parameterized constraint model and scenario files.

Constraint parameters ``theta`` describe obstacle boxes in constraint space.
Every obstacle is a list of facets; a facet pairs one constraint-space
coordinate ``m`` with one parameter coordinate ``c``:

* lower facet: value ``kappa[m] - theta[c]`` (safe side is ``kappa[m] <= theta[c]``)
* upper facet: value ``theta[c] - kappa[m]`` (safe side is ``kappa[m] >= theta[c]``)

An obstacle's violation is the minimum of its facet values, so it is
positive exactly when ``kappa`` is strictly inside the box. The overall
violation ``g`` is the maximum over obstacles. A scalar control bound
``||u||^2 <= theta`` is the special case of a single lower facet.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Box, BoxUnion, disjointify

SCHEMA_VERSION = 1
STRICT_TOL = 1e-9
DYNAMICS_TOL = 1e-9

PHI_KINDS = ("state-projection", "control-norm-squared", "identity")
COST_KINDS = ("sum-squared-control", "path-length")
DYNAMICS_KINDS = ("single-integrator", "double-integrator")


class ScenarioError(ValueError):
    """Validation or parse failure; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


# ---------------------------------------------------------------- dynamics


@dataclass(frozen=True)
class Dynamics:
    kind: str
    dim: int
    dt: float
    state_bounds: Box
    control_bounds: Box

    def __post_init__(self):
        if self.kind not in DYNAMICS_KINDS:
            raise ScenarioError("dynamics.kind", f"unknown kind {self.kind!r}")
        if self.dim < 1:
            raise ScenarioError("dynamics.dim", "must be at least 1")
        if not self.dt > 0:
            raise ScenarioError("dynamics.dt", "must be positive")
        if self.state_bounds.dim != self.state_dim:
            raise ScenarioError(
                "dynamics.state_bounds",
                f"expected dimension {self.state_dim}, got {self.state_bounds.dim}",
            )
        if self.control_bounds.dim != self.control_dim:
            raise ScenarioError(
                "dynamics.control_bounds",
                f"expected dimension {self.control_dim}, got {self.control_bounds.dim}",
            )

    @property
    def state_dim(self) -> int:
        return self.dim if self.kind == "single-integrator" else 2 * self.dim

    @property
    def control_dim(self) -> int:
        return self.dim

    def matrices(self) -> tuple[np.ndarray, np.ndarray]:
        """``(A, B)`` with ``x_{t+1} = A x_t + B u_t`` (forward Euler)."""
        n, m, dt = self.state_dim, self.control_dim, self.dt
        if self.kind == "single-integrator":
            return np.eye(n), dt * np.eye(m)
        A = np.eye(n)
        A[: self.dim, self.dim:] = dt * np.eye(self.dim)
        B = np.zeros((n, m))
        B[self.dim:, :] = dt * np.eye(m)
        return A, B

    def step(self, x, u) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        if self.kind == "single-integrator":
            return x + self.dt * u
        pos, vel = x[: self.dim], x[self.dim:]
        return np.concatenate([pos + self.dt * vel, vel + self.dt * u])

    def position(self, states) -> np.ndarray:
        return np.asarray(states, dtype=float)[..., : self.dim]


@dataclass(frozen=True)
class Trajectory:
    """States ``(T, n)`` and controls ``(T-1, m)``."""

    states: np.ndarray
    controls: np.ndarray

    def __post_init__(self):
        s = np.array(self.states, dtype=float)
        c = np.array(self.controls, dtype=float)
        if s.ndim != 2:
            raise ValueError("states must be a 2-D array")
        if c.ndim != 2:
            c = c.reshape(max(s.shape[0] - 1, 0), -1)
        if c.shape[0] != s.shape[0] - 1:
            raise ValueError(f"{s.shape[0]} states need {s.shape[0] - 1} controls, got {c.shape[0]}")
        s.flags.writeable = False
        c.flags.writeable = False
        object.__setattr__(self, "states", s)
        object.__setattr__(self, "controls", c)

    @property
    def T(self) -> int:
        return self.states.shape[0]

    def flat(self) -> np.ndarray:
        return np.concatenate([self.states.ravel(), self.controls.ravel()])

    def to_lists(self) -> list:
        return [self.states.tolist(), self.controls.tolist()]


def check_trajectory(traj: Trajectory, dyn: Dynamics, tol: float = DYNAMICS_TOL,
                     name: str = "trajectory") -> None:
    """Raise :class:`ScenarioError` naming the first broken timestep."""
    if traj.states.shape[1] != dyn.state_dim:
        raise ScenarioError(f"{name}.states", f"state dimension {traj.states.shape[1]} != {dyn.state_dim}")
    if traj.T >= 2 and traj.controls.shape[1] != dyn.control_dim:
        raise ScenarioError(f"{name}.controls", f"control dimension {traj.controls.shape[1]} != {dyn.control_dim}")
    bound_tol = 1e-9
    for t in range(traj.T):
        if not dyn.state_bounds.contains(traj.states[t], tol=bound_tol):
            raise ScenarioError(f"{name}.states[{t}]", "outside state bounds")
    for t in range(traj.T - 1):
        if not dyn.control_bounds.contains(traj.controls[t], tol=bound_tol):
            raise ScenarioError(f"{name}.controls[{t}]", "outside control bounds")
        nxt = dyn.step(traj.states[t], traj.controls[t])
        err = float(np.max(np.abs(nxt - traj.states[t + 1])))
        if err > tol:
            raise ScenarioError(f"{name}.states[{t + 1}]", f"violates dynamics at timestep {t} by {err:.3g}")


def rollout(dyn: Dynamics, x0, controls) -> Trajectory:
    controls = np.asarray(controls, dtype=float).reshape(-1, dyn.control_dim)
    states = [np.asarray(x0, dtype=float)]
    if states[0].size != dyn.state_dim:
        raise ScenarioError("x0", f"expected {dyn.state_dim} entries, got {states[0].size}")
    for t, u in enumerate(controls):
        if not dyn.control_bounds.contains(u, tol=1e-9):
            raise ScenarioError(f"controls[{t}]", "outside control bounds")
        states.append(dyn.step(states[-1], u))
        if not dyn.state_bounds.contains(states[-1], tol=1e-9):
            raise ScenarioError(f"states[{t + 1}]", "outside state bounds")
    return Trajectory(np.array(states), controls)


# ---------------------------------------------------------------- task


@dataclass(frozen=True)
class Task:
    dynamics: Dynamics
    T: int
    cost: str
    x0: np.ndarray
    xg: np.ndarray
    known_unsafe: BoxUnion
    delta_kkt: float = 1e-6
    resolution: float | None = None
    connectivity: str = "full"

    def __post_init__(self):
        if self.T < 2:
            raise ScenarioError("task.T", "horizon must be at least 2")
        if self.cost not in COST_KINDS:
            raise ScenarioError("task.cost", f"unknown cost {self.cost!r}")
        n = self.dynamics.state_dim
        for name in ("x0", "xg"):
            v = np.array(getattr(self, name), dtype=float).reshape(-1)
            if v.size != n:
                raise ScenarioError(f"task.{name}", f"expected {n} entries, got {v.size}")
            if not self.dynamics.state_bounds.contains(v, tol=1e-9):
                raise ScenarioError(f"task.{name}", "outside state bounds")
            v.flags.writeable = False
            object.__setattr__(self, name, v)
        if self.known_unsafe.dim != self.dynamics.dim:
            raise ScenarioError("task.known_unsafe", f"boxes must have workspace dimension {self.dynamics.dim}")
        for name in ("x0", "xg"):
            p = getattr(self, name)[: self.dynamics.dim]
            for b in self.known_unsafe:
                if np.all(p > b.lo + STRICT_TOL) and np.all(p < b.hi - STRICT_TOL):
                    raise ScenarioError(f"task.{name}", "inside a known unsafe box")
        if not self.delta_kkt > 0:
            raise ScenarioError("delta_kkt", "must be positive")
        if self.connectivity not in ("full", "axis"):
            raise ScenarioError("lattice.connectivity", "must be 'full' or 'axis'")

    def cost_value(self, states, controls) -> float:
        if self.cost == "sum-squared-control":
            return float(np.sum(np.asarray(controls) ** 2))
        pos = self.dynamics.position(states)
        return float(np.sum(np.linalg.norm(np.diff(pos, axis=0), axis=1)))

    def cost_grad(self, states, controls) -> tuple[np.ndarray, np.ndarray]:
        """Gradient of the cost w.r.t. states and controls.

        Path length uses the zero subgradient on zero-length segments.
        """
        states = np.asarray(states, dtype=float)
        controls = np.asarray(controls, dtype=float)
        gs = np.zeros_like(states)
        gu = np.zeros_like(controls)
        if self.cost == "sum-squared-control":
            gu = 2.0 * controls
            return gs, gu
        d = self.dynamics.dim
        seg = np.diff(states[:, :d], axis=0)
        norms = np.linalg.norm(seg, axis=1)
        unit = np.zeros_like(seg)
        nz = norms > 0
        unit[nz] = seg[nz] / norms[nz, None]
        gs[1:, :d] += unit
        gs[:-1, :d] -= unit
        return gs, gu


# ---------------------------------------------------------------- constraint model


@dataclass(frozen=True)
class ConstraintBlock:
    """One factor of the constraint space with its own parameter block."""

    phi: str
    n_obs: int
    kappa_offset: int
    kappa_dim: int
    theta_offset: int

    @property
    def theta_dim(self) -> int:
        if self.phi == "control-norm-squared":
            return 1
        return self.n_obs * 2 * self.kappa_dim


class ConstraintModel:
    """Offset-parameterized union-of-boxes unsafe set over a product constraint space.

    Parameters
    ----------
    phi : str or list of str
        Map kinds, one per block.
    n_obs : int or list of int
        Obstacle boxes per block (must be 1 for a scalar control bound).
    theta_prior : Box
        Prior region of the parameters.
    dynamics : Dynamics
        Supplies dimensions and constraint-space bounds.
    """

    def __init__(self, phi, n_obs, theta_prior: Box, dynamics: Dynamics):
        phis = [phi] if isinstance(phi, str) else list(phi)
        nobs = [n_obs] * len(phis) if isinstance(n_obs, (int, np.integer)) else list(n_obs)
        if not phis:
            raise ScenarioError("model.phi", "at least one map is required")
        if len(nobs) != len(phis):
            raise ScenarioError("model.n_obs", "needs one entry per map")
        blocks = []
        k_off = t_off = 0
        for i, (p, n) in enumerate(zip(phis, nobs)):
            if p not in PHI_KINDS:
                raise ScenarioError(f"model.phi[{i}]", f"unknown map {p!r}")
            if p == "control-norm-squared":
                if n != 1:
                    raise ScenarioError(f"model.n_obs[{i}]", "a scalar control bound has exactly one parameter")
                kd = 1
            else:
                if n < 1:
                    raise ScenarioError(f"model.n_obs[{i}]", "must be at least 1")
                kd = dynamics.dim if p == "state-projection" else dynamics.state_dim
            blk = ConstraintBlock(p, int(n), k_off, kd, t_off)
            blocks.append(blk)
            k_off += kd
            t_off += blk.theta_dim
        if theta_prior.dim != t_off:
            raise ScenarioError("model.theta_prior", f"expected dimension {t_off}, got {theta_prior.dim}")
        self.blocks = tuple(blocks)
        self.theta_prior = theta_prior
        self.dynamics = dynamics
        self.kappa_dim = k_off
        self.theta_dim = t_off
        self._build_facets()
        self.kappa_bounds = self._kappa_bounds()

    # facets: one row per (obstacle, facet)
    def _build_facets(self):
        coord, tidx, sign, obs = [], [], [], []
        obs_block = []
        j = 0
        for blk in self.blocks:
            if blk.phi == "control-norm-squared":
                coord.append(blk.kappa_offset)
                tidx.append(blk.theta_offset)
                sign.append(1.0)
                obs.append(j)
                obs_block.append(blk)
                j += 1
                continue
            k = blk.kappa_dim
            for o in range(blk.n_obs):
                base = blk.theta_offset + o * 2 * k
                for m in range(k):
                    coord.append(blk.kappa_offset + m)
                    tidx.append(base + m)
                    sign.append(1.0)
                    obs.append(j)
                for m in range(k):
                    coord.append(blk.kappa_offset + m)
                    tidx.append(base + k + m)
                    sign.append(-1.0)
                    obs.append(j)
                obs_block.append(blk)
                j += 1
        self.facet_coord = np.array(coord, dtype=int)
        self.facet_theta = np.array(tidx, dtype=int)
        self.facet_sign = np.array(sign)
        self.facet_obs = np.array(obs, dtype=int)
        self.n_obstacles = j
        self.obstacle_block = tuple(obs_block)
        self.obstacle_facets = tuple(np.flatnonzero(self.facet_obs == o) for o in range(j))

    @property
    def n_facets(self) -> int:
        return self.facet_coord.size

    def _kappa_bounds(self) -> Box:
        dyn = self.dynamics
        lo, hi = [], []
        for blk in self.blocks:
            if blk.phi == "state-projection":
                lo.extend(dyn.state_bounds.lo[: dyn.dim])
                hi.extend(dyn.state_bounds.hi[: dyn.dim])
            elif blk.phi == "identity":
                lo.extend(dyn.state_bounds.lo)
                hi.extend(dyn.state_bounds.hi)
            else:
                cb = dyn.control_bounds
                lo.append(0.0)
                hi.append(float(np.sum(np.maximum(cb.lo ** 2, cb.hi ** 2))))
        return Box(lo, hi)

    # -- maps ------------------------------------------------------------
    def kappa(self, states, controls) -> np.ndarray:
        """Constraint points ``(n, kappa_dim)`` for paired states and controls."""
        states = np.atleast_2d(np.asarray(states, dtype=float))
        controls = np.atleast_2d(np.asarray(controls, dtype=float))
        parts = []
        for blk in self.blocks:
            if blk.phi == "state-projection":
                parts.append(states[:, : self.dynamics.dim])
            elif blk.phi == "identity":
                parts.append(states)
            else:
                parts.append(np.sum(controls ** 2, axis=1, keepdims=True))
        return np.hstack(parts)

    def trajectory_kappa(self, traj: Trajectory) -> np.ndarray:
        """One constraint point per timestep; the final state pairs with zero control."""
        m = self.dynamics.control_dim
        controls = np.vstack([traj.controls.reshape(-1, m), np.zeros((1, m))])
        return self.kappa(traj.states, controls)

    def kappa_jacobians(self, states, controls):
        """Jacobians of each timestep's constraint point.

        Returns ``(Js, Ju)`` with shapes ``(T, k, n)`` and ``(T, k, m)``.
        """
        states = np.atleast_2d(np.asarray(states, dtype=float))
        controls = np.atleast_2d(np.asarray(controls, dtype=float))
        T, n = states.shape
        m = controls.shape[1]
        Js = np.zeros((T, self.kappa_dim, n))
        Ju = np.zeros((T, self.kappa_dim, m))
        for blk in self.blocks:
            o = blk.kappa_offset
            if blk.phi == "state-projection":
                for i in range(self.dynamics.dim):
                    Js[:, o + i, i] = 1.0
            elif blk.phi == "identity":
                for i in range(n):
                    Js[:, o + i, i] = 1.0
            else:
                Ju[:, o, :] = 2.0 * controls
        return Js, Ju

    # -- constraint values ----------------------------------------------
    def facet_values(self, theta, kappa) -> np.ndarray:
        """Facet values ``(n, n_facets)`` for one theta and points ``(n, k)``."""
        theta = np.asarray(theta, dtype=float)
        kappa = np.atleast_2d(np.asarray(kappa, dtype=float))
        return self.facet_sign * (kappa[:, self.facet_coord] - theta[self.facet_theta])

    def obstacle_values(self, theta, kappa) -> np.ndarray:
        fv = self.facet_values(theta, kappa)
        return np.stack([fv[:, idx].min(axis=1) for idx in self.obstacle_facets], axis=1)

    def g(self, theta, kappa) -> np.ndarray:
        """Violation at each point; positive means strictly inside an obstacle."""
        return self.obstacle_values(theta, kappa).max(axis=1)

    def g_many(self, thetas, kappa) -> np.ndarray:
        """Violation for many parameters: returns ``(N, n)``."""
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        kappa = np.atleast_2d(np.asarray(kappa, dtype=float))
        fv = self.facet_sign[None, None, :] * (
            kappa[None, :, self.facet_coord] - thetas[:, None, self.facet_theta]
        )
        per_obs = np.stack([fv[:, :, idx].min(axis=2) for idx in self.obstacle_facets], axis=2)
        return per_obs.max(axis=2)

    def unsafe_many(self, thetas, kappa, tol: float = STRICT_TOL) -> np.ndarray:
        """``(N,)`` flags: does any point violate under each parameter?"""
        out = np.zeros(np.atleast_2d(thetas).shape[0], dtype=bool)
        kappa = np.atleast_2d(kappa)
        chunk = max(1, 200000 // max(1, kappa.shape[0] * self.n_facets))
        thetas = np.atleast_2d(thetas)
        for s in range(0, thetas.shape[0], chunk):
            out[s:s + chunk] = (self.g_many(thetas[s:s + chunk], kappa) > tol).any(axis=1)
        return out

    # -- regions ----------------------------------------------------------
    def _obstacle_box(self, o: int, lower_from, upper_from) -> Box | None:
        # pad past the constraint-space bounds so that points on those bounds
        # still count as strictly inside an obstacle that extends beyond them
        kb = self.kappa_bounds
        pad = np.maximum(kb.hi - kb.lo, 1.0)
        lo = kb.lo - pad
        hi = kb.hi + pad
        for f in self.obstacle_facets[o]:
            m, c = self.facet_coord[f], self.facet_theta[f]
            if self.facet_sign[f] > 0:
                lo[m] = max(lo[m], lower_from[c])
            else:
                hi[m] = min(hi[m], upper_from[c])
        if np.any(lo >= hi):
            return None
        return Box(lo, hi)

    def obstacle_boxes(self, theta_box: Box, inner: bool = False) -> list:
        """Per-obstacle constraint-space boxes (``None`` for empty ones).

        ``inner=False`` gives the union over the parameter box; ``inner=True``
        gives the intersection.
        """
        if theta_box.dim != self.theta_dim:
            raise ValueError(f"parameter box has dimension {theta_box.dim}, model needs {self.theta_dim}")
        if inner:
            return [self._obstacle_box(o, theta_box.hi, theta_box.lo) for o in range(self.n_obstacles)]
        return [self._obstacle_box(o, theta_box.lo, theta_box.hi) for o in range(self.n_obstacles)]

    def theta_blocks(self) -> list[np.ndarray]:
        """Parameter indices of each obstacle."""
        return [np.unique(self.facet_theta[idx]) for idx in self.obstacle_facets]

    def to_dict(self) -> dict:
        phis = [b.phi for b in self.blocks]
        nobs = [b.n_obs for b in self.blocks]
        return {
            "phi": phis[0] if len(phis) == 1 else phis,
            "n_obs": nobs[0] if len(nobs) == 1 else nobs,
            "theta_prior": self.theta_prior.to_dict(),
        }


def g_value(model: ConstraintModel, theta, kappa) -> float:
    """Signed violation at a single constraint point."""
    theta = np.asarray(theta, dtype=float).reshape(-1)
    kappa = np.asarray(kappa, dtype=float).reshape(-1)
    if theta.size != model.theta_dim:
        raise ValueError(f"theta has {theta.size} entries, model needs {model.theta_dim}")
    if kappa.size != model.kappa_dim:
        raise ValueError(f"kappa has {kappa.size} entries, model needs {model.kappa_dim}")
    return float(model.g(theta, kappa[None, :])[0])


def unsafe_region(model: ConstraintModel, theta_box: Box) -> BoxUnion:
    """Union of the unsafe sets over every parameter in ``theta_box``."""
    boxes = [b for b in model.obstacle_boxes(theta_box) if b is not None]
    return disjointify(boxes, dim=model.kappa_dim)


def inner_unsafe_region(model: ConstraintModel, theta_box: Box) -> BoxUnion:
    """Points unsafe for every parameter in ``theta_box`` (open boxes, stored closed)."""
    boxes = [b for b in model.obstacle_boxes(theta_box, inner=True) if b is not None]
    return disjointify(boxes, dim=model.kappa_dim)


def path_points(model: ConstraintModel, traj: Trajectory, spacing: float):
    """Constraint points along each executed step, sampled at ``<= spacing``.

    Returns ``(points, step_index)``; the final resting state gets index ``T-1``.
    """
    dyn = model.dynamics
    pts, steps = [], []
    zero_u = np.zeros(dyn.control_dim)
    for t in range(traj.T - 1):
        a, b = traj.states[t], traj.states[t + 1]
        dist = float(np.max(np.abs(dyn.position(b) - dyn.position(a))))
        n = max(1, int(math.ceil(dist / spacing - 1e-9)))
        s = np.linspace(0.0, 1.0, n + 1)[:, None]
        seg = a[None, :] * (1 - s) + b[None, :] * s
        u = np.repeat(traj.controls[t][None, :], n + 1, axis=0)
        pts.append(model.kappa(seg, u))
        steps.append(np.full(n + 1, t))
    pts.append(model.kappa(traj.states[-1:], zero_u[None, :]))
    steps.append(np.array([traj.T - 1]))
    return np.vstack(pts), np.concatenate(steps)


# ---------------------------------------------------------------- files

_TOP_KEYS = {"version", "dynamics", "task", "model", "demos"}
_OPTIONAL_TOP = {"delta_kkt", "lattice", "name", "query"}
_QUERY_KEYS = {"x0", "xg", "T"}
_DYN_KEYS = {"kind", "dim", "dt", "state_bounds", "control_bounds"}
_TASK_KEYS = {"T", "cost", "x0", "xg", "known_unsafe"}
_MODEL_KEYS = {"phi", "n_obs", "theta_prior"}
_LATTICE_KEYS = {"resolution", "connectivity"}


def _reject_unknown(d: dict, allowed: set, where: str):
    if not isinstance(d, dict):
        raise ScenarioError(where, "must be an object")
    extra = sorted(set(d) - allowed)
    if extra:
        raise ScenarioError(f"{where}.{extra[0]}" if where else extra[0], "unknown field")


def _require(d: dict, keys: set, where: str):
    for k in sorted(keys):
        if k not in d:
            raise ScenarioError(f"{where}.{k}" if where else k, "missing field")


def _box(obj, where: str) -> Box:
    try:
        if isinstance(obj, dict):
            _reject_unknown(obj, {"lo", "hi"}, where)
            return Box(obj["lo"], obj["hi"])
        lo, hi = obj
        return Box(lo, hi)
    except ScenarioError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ScenarioError(where, f"invalid box ({exc})") from None


@dataclass
class Scenario:
    """Bundle of everything a scenario file holds."""

    task: Task
    model: ConstraintModel
    demos: list = field(default_factory=list)
    name: str = ""
    query: Task | None = None

    @property
    def planning_task(self) -> Task:
        """Task to plan for: the query if one is given, else the demonstration task."""
        return self.query if self.query is not None else self.task

    def as_tuple(self):
        return self.task, self.model, self.demos


def parse_scenario(data: dict) -> Scenario:
    _reject_unknown(data, _TOP_KEYS | _OPTIONAL_TOP, "")
    _require(data, _TOP_KEYS, "")
    if data["version"] != SCHEMA_VERSION:
        raise ScenarioError("version", f"unsupported version {data['version']!r}")
    d = data["dynamics"]
    _reject_unknown(d, _DYN_KEYS, "dynamics")
    _require(d, _DYN_KEYS, "dynamics")
    try:
        dim = int(d["dim"])
        dt = float(d["dt"])
    except (TypeError, ValueError):
        raise ScenarioError("dynamics", "dim and dt must be numbers") from None
    dyn = Dynamics(d["kind"], dim, dt, _box(d["state_bounds"], "dynamics.state_bounds"),
                   _box(d["control_bounds"], "dynamics.control_bounds"))
    t = data["task"]
    _reject_unknown(t, _TASK_KEYS, "task")
    _require(t, _TASK_KEYS, "task")
    known = t["known_unsafe"]
    if not isinstance(known, list):
        raise ScenarioError("task.known_unsafe", "must be a list of boxes")
    known_boxes = [_box(b, f"task.known_unsafe[{i}]") for i, b in enumerate(known)]
    for i, b in enumerate(known_boxes):
        if b.dim != dim:
            raise ScenarioError(f"task.known_unsafe[{i}]", f"expected dimension {dim}")
    lattice = data.get("lattice", {})
    _reject_unknown(lattice, _LATTICE_KEYS, "lattice")
    try:
        T = int(t["T"])
    except (TypeError, ValueError):
        raise ScenarioError("task.T", "must be an integer") from None
    task = Task(
        dynamics=dyn,
        T=T,
        cost=t["cost"],
        x0=np.asarray(t["x0"], dtype=float),
        xg=np.asarray(t["xg"], dtype=float),
        known_unsafe=disjointify(known_boxes, dim=dim),
        delta_kkt=float(data.get("delta_kkt", 1e-6)),
        resolution=None if "resolution" not in lattice else float(lattice["resolution"]),
        connectivity=str(lattice.get("connectivity", "full")),
    )
    m = data["model"]
    _reject_unknown(m, _MODEL_KEYS, "model")
    _require(m, _MODEL_KEYS, "model")
    model = ConstraintModel(m["phi"], m["n_obs"], _box(m["theta_prior"], "model.theta_prior"), dyn)
    if model.theta_prior.volume() <= 0:
        raise ScenarioError("model.theta_prior", "must have positive volume")
    demos = []
    if not isinstance(data["demos"], list):
        raise ScenarioError("demos", "must be a list")
    for i, pair in enumerate(data["demos"]):
        if not (isinstance(pair, list) and len(pair) == 2):
            raise ScenarioError(f"demos[{i}]", "expected [states, controls]")
        try:
            states = np.asarray(pair[0], dtype=float)
            controls = np.asarray(pair[1], dtype=float)
            if controls.size == 0:
                controls = controls.reshape(0, dyn.control_dim)
            traj = Trajectory(states, controls)
        except ValueError as exc:
            raise ScenarioError(f"demos[{i}]", str(exc)) from None
        if traj.T != task.T:
            raise ScenarioError(f"demos[{i}]", f"has {traj.T} timesteps, task horizon is {task.T}")
        check_trajectory(traj, dyn, name=f"demos[{i}]")
        demos.append(traj)
    query = None
    if "query" in data:
        q = data["query"]
        _reject_unknown(q, _QUERY_KEYS, "query")
        try:
            query = dataclasses.replace(
                task,
                x0=np.asarray(q.get("x0", task.x0), dtype=float),
                xg=np.asarray(q.get("xg", task.xg), dtype=float),
                T=int(q.get("T", task.T)),
            )
        except ScenarioError as exc:
            raise ScenarioError("query." + exc.field.split(".")[-1], str(exc).split(": ", 1)[-1]) from None
    return Scenario(task, model, demos, name=str(data.get("name", "")), query=query)


def scenario_to_dict(task: Task, model: ConstraintModel, demos, name: str = "",
                     query: Task | None = None) -> dict:
    dyn = task.dynamics
    out = {
        "version": SCHEMA_VERSION,
        "dynamics": {
            "kind": dyn.kind,
            "dim": dyn.dim,
            "dt": dyn.dt,
            "state_bounds": dyn.state_bounds.to_dict(),
            "control_bounds": dyn.control_bounds.to_dict(),
        },
        "task": {
            "T": task.T,
            "cost": task.cost,
            "x0": task.x0.tolist(),
            "xg": task.xg.tolist(),
            "known_unsafe": task.known_unsafe.to_list(),
        },
        "model": model.to_dict(),
        "demos": [d.to_lists() for d in demos],
        "delta_kkt": task.delta_kkt,
    }
    if task.resolution is not None or task.connectivity != "full":
        out["lattice"] = {}
        if task.resolution is not None:
            out["lattice"]["resolution"] = task.resolution
        if task.connectivity != "full":
            out["lattice"]["connectivity"] = task.connectivity
    if name:
        out["name"] = name
    if query is not None:
        out["query"] = {"x0": query.x0.tolist(), "xg": query.xg.tolist(), "T": query.T}
    return out


EXAMPLES = ("toy_t1", "mixed_desk", "scalar_bound", "maze", "sequential", "walled_off")


def example_path(name: str) -> Path:
    """Path of a scenario file shipped with the package."""
    if name not in EXAMPLES:
        raise KeyError(f"unknown example {name!r}; expected one of {EXAMPLES}")
    return Path(__file__).parent / "data" / f"{name}.json"


def load_scenario(path) -> tuple:
    """Read a scenario file and return ``(task, model, demos)``."""
    return read_scenario(path).as_tuple()


def read_scenario(path) -> Scenario:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError("file", f"malformed JSON ({exc})") from None
    return parse_scenario(data)


def save_scenario(path, task: Task, model: ConstraintModel, demos, name: str = "",
                  query: Task | None = None) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(task, model, demos, name, query), indent=1) + "\n")
