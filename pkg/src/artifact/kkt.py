"""First-order optimality (KKT) checks for demonstrations.

The decision vector of a trajectory is ``z = (states.ravel(), controls.ravel())``.
Dynamics and the fixed start/goal are equality constraints; state bounds,
control bounds and known unsafe boxes are known inequalities; every facet of
every unknown obstacle at every timestep is an unknown inequality with its
own multiplier. For fixed ``theta`` the stationarity condition is linear in
the multipliers, so the best multipliers come from a small linear program.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .geometry import Box
from .scenario import ConstraintModel, Task, Trajectory, check_trajectory

DEFAULT_DELTA_KKT = 1e-6


@dataclass
class Multipliers:
    lam_known: np.ndarray
    lam_unknown: np.ndarray  # shape (T, n_facets)
    nu: np.ndarray

    def __post_init__(self):
        for name in ("lam_known", "lam_unknown"):
            v = np.asarray(getattr(self, name), dtype=float)
            if np.any(v < 0):
                raise ValueError(f"{name} must be nonnegative")
            setattr(self, name, v)
        self.nu = np.asarray(self.nu, dtype=float)


@dataclass(frozen=True)
class KktReport:
    primal_residual: float
    comp_slack_residual: float
    stationarity_residual: float
    consistent: bool

    @property
    def max_residual(self) -> float:
        return max(self.primal_residual, self.comp_slack_residual, self.stationarity_residual)


class KktSystem:
    """Precomputed gradients for one demonstration under one task and model.

    Everything that does not depend on ``theta`` is built once, so repeated
    queries (grid oracles, box checks) only pay for the parameter-dependent
    parts.
    """

    def __init__(self, traj: Trajectory, task: Task, model: ConstraintModel):
        dyn = task.dynamics
        if traj.states.shape[1] != dyn.state_dim:
            raise ValueError(f"trajectory state dimension {traj.states.shape[1]} != {dyn.state_dim}")
        if traj.T != task.T:
            raise ValueError(f"trajectory has {traj.T} timesteps, task horizon is {task.T}")
        self.traj = traj
        self.task = task
        self.model = model
        T, n, m = traj.T, dyn.state_dim, dyn.control_dim
        self.T, self.n, self.m = T, n, m
        self.N = T * n + (T - 1) * m
        states, controls = traj.states, traj.controls.reshape(T - 1, m)

        gs, gu = task.cost_grad(states, controls)
        self.grad_cost = np.concatenate([gs.ravel(), gu.ravel()])

        # equality constraints: dynamics, start, goal
        A, B = dyn.matrices()
        rows = []
        for t in range(T - 1):
            blk = np.zeros((n, self.N))
            blk[:, self._s(t + 1)] = np.eye(n)
            blk[:, self._s(t)] -= A
            blk[:, self._u(t)] -= B
            rows.append(blk)
        start = np.zeros((n, self.N))
        start[:, self._s(0)] = np.eye(n)
        goal = np.zeros((n, self.N))
        goal[:, self._s(T - 1)] = np.eye(n)
        self.J_eq = np.vstack(rows + [start, goal])
        flat = np.concatenate([states.ravel(), controls.ravel()])
        self._dynamics_residual = float(np.max(np.abs(np.vstack(rows) @ flat))) if rows else 0.0

        # known inequalities
        g_rows, g_vals, groups = [], [], []
        sb, cb = dyn.state_bounds, dyn.control_bounds
        for t in range(T):
            for i in range(n):
                r = np.zeros(self.N)
                r[self._s(t).start + i] = -1.0
                g_rows.append(r)
                g_vals.append(sb.lo[i] - states[t, i])
                groups.append(-1)
                r = np.zeros(self.N)
                r[self._s(t).start + i] = 1.0
                g_rows.append(r)
                g_vals.append(states[t, i] - sb.hi[i])
                groups.append(-1)
        for t in range(T - 1):
            for j in range(m):
                r = np.zeros(self.N)
                r[self._u(t).start + j] = -1.0
                g_rows.append(r)
                g_vals.append(cb.lo[j] - controls[t, j])
                groups.append(-1)
                r = np.zeros(self.N)
                r[self._u(t).start + j] = 1.0
                g_rows.append(r)
                g_vals.append(controls[t, j] - cb.hi[j])
                groups.append(-1)
        gid = 0
        for t in range(T):
            p = states[t, : dyn.dim]
            for b in task.known_unsafe:
                for k in range(dyn.dim):
                    r = np.zeros(self.N)
                    r[self._s(t).start + k] = 1.0
                    g_rows.append(r)
                    g_vals.append(p[k] - b.lo[k])
                    groups.append(gid)
                for k in range(dyn.dim):
                    r = np.zeros(self.N)
                    r[self._s(t).start + k] = -1.0
                    g_rows.append(r)
                    g_vals.append(b.hi[k] - p[k])
                    groups.append(gid)
                gid += 1
        self.G_known = np.array(g_rows).reshape(-1, self.N)
        self.g_known = np.array(g_vals, dtype=float)
        self.known_group = np.array(groups, dtype=int)
        self.n_known = self.g_known.size

        # unknown facets, one row per (timestep, facet)
        self.kappa = model.trajectory_kappa(traj)
        u_pad = np.vstack([controls, np.zeros((1, m))])
        Js, Ju = model.kappa_jacobians(states, u_pad)
        nf = model.n_facets
        G_unk = np.zeros((T, nf, self.N))
        for t in range(T):
            for f in range(nf):
                mc = model.facet_coord[f]
                sgn = model.facet_sign[f]
                G_unk[t, f, self._s(t)] = sgn * Js[t, mc]
                if t < T - 1:
                    G_unk[t, f, self._u(t)] = sgn * Ju[t, mc]
        self.G_unknown = G_unk.reshape(T * nf, self.N)
        self.n_facets = nf

        self._known_primal = self._known_primal_residual()
        self._free_solution = None

    # index helpers
    def _s(self, t: int) -> slice:
        return slice(t * self.n, (t + 1) * self.n)

    def _u(self, t: int) -> slice:
        base = self.T * self.n
        return slice(base + t * self.m, base + (t + 1) * self.m)

    # -- residual pieces -----------------------------------------------------
    def _known_primal_residual(self) -> float:
        res = 0.0
        plain = self.known_group < 0
        if np.any(plain):
            res = max(res, float(np.max(self.g_known[plain])))
        for gid in np.unique(self.known_group[~plain]):
            res = max(res, float(np.min(self.g_known[self.known_group == gid])))
        return max(res, self._dynamics_residual, 0.0)

    def unknown_values(self, theta) -> np.ndarray:
        """Facet values ``(T, n_facets)`` at the demo points."""
        return self.model.facet_values(theta, self.kappa)

    def unknown_primal(self, theta) -> float:
        return max(0.0, float(np.max(self.model.g(theta, self.kappa))))

    def robust_unknown_primal(self, box: Box) -> float:
        """Worst violation over the box; each facet is monotone in its own coordinate."""
        model = self.model
        lo_t = box.lo[model.facet_theta]
        hi_t = box.hi[model.facet_theta]
        kap = self.kappa[:, model.facet_coord]
        worst = np.where(model.facet_sign > 0, kap - lo_t, hi_t - kap)
        per_obs = np.stack([worst[:, idx].min(axis=1) for idx in model.obstacle_facets], axis=1)
        return max(0.0, float(per_obs.max()))

    def residuals(self, theta, mult: Multipliers, delta: float = DEFAULT_DELTA_KKT) -> KktReport:
        fv = self.unknown_values(theta).ravel()
        lam_u = np.asarray(mult.lam_unknown, dtype=float).reshape(-1)
        if lam_u.size != fv.size or mult.lam_known.size != self.n_known or mult.nu.size != self.J_eq.shape[0]:
            raise ValueError("multiplier lengths do not match the task's constraint counts")
        primal = max(self._known_primal, self.unknown_primal(theta))
        comp = 0.0
        if self.n_known:
            comp = float(np.max(np.abs(mult.lam_known * self.g_known)))
        if fv.size:
            comp = max(comp, float(np.max(np.abs(lam_u * fv))))
        stat = self.grad_cost + self.G_known.T @ mult.lam_known + self.G_unknown.T @ lam_u + self.J_eq.T @ mult.nu
        stat_res = float(np.max(np.abs(stat))) if stat.size else 0.0
        ok = max(primal, comp, stat_res) <= delta
        return KktReport(primal, comp, stat_res, bool(ok))

    # -- multiplier search ---------------------------------------------------
    def solve_multipliers(self, allowed: np.ndarray | None, weights: np.ndarray | None):
        """Minimize the worst stationarity / complementary-slackness residual.

        ``allowed`` masks the unknown-facet multipliers that may be nonzero
        (flattened ``(T * n_facets,)``); ``weights`` are ``|g|`` for those
        facets, entering complementary slackness. Returns ``(value, mult)``.
        """
        nk, ne, N = self.n_known, self.J_eq.shape[0], self.N
        if allowed is None:
            allowed = np.zeros(self.T * self.n_facets, dtype=bool)
        idx = np.flatnonzero(allowed)
        na = idx.size
        nv = nk + na + ne + 1
        M = np.hstack([self.G_known.T, self.G_unknown[idx].T, self.J_eq.T])  # N x (nk+na+ne)
        s_col = -np.ones((N, 1))
        A_ub = [np.hstack([M, s_col]), np.hstack([-M, s_col])]
        b_ub = [-self.grad_cost, self.grad_cost]
        wk = np.abs(self.g_known)
        rows_k = np.flatnonzero(wk > 0)
        if rows_k.size:
            blk = np.zeros((rows_k.size, nv))
            blk[np.arange(rows_k.size), rows_k] = wk[rows_k]
            blk[:, -1] = -1.0
            A_ub.append(blk)
            b_ub.append(np.zeros(rows_k.size))
        if na:
            wu = np.abs(np.asarray(weights, dtype=float)[idx]) if weights is not None else np.zeros(na)
            rows_u = np.flatnonzero(wu > 0)
            if rows_u.size:
                blk = np.zeros((rows_u.size, nv))
                blk[np.arange(rows_u.size), nk + rows_u] = wu[rows_u]
                blk[:, -1] = -1.0
                A_ub.append(blk)
                b_ub.append(np.zeros(rows_u.size))
        c = np.zeros(nv)
        c[-1] = 1.0
        bounds = [(0, None)] * (nk + na) + [(None, None)] * ne + [(0, None)]
        res = linprog(c, A_ub=np.vstack(A_ub), b_ub=np.concatenate(b_ub), bounds=bounds, method="highs")
        lam_u = np.zeros(self.T * self.n_facets)
        if res.status != 0 or res.x is None:
            mult = Multipliers(np.zeros(nk), lam_u.reshape(self.T, self.n_facets), np.zeros(ne))
            return float("inf"), mult
        x = res.x
        lam_u[idx] = np.maximum(x[nk:nk + na], 0.0)
        mult = Multipliers(np.maximum(x[:nk], 0.0), lam_u.reshape(self.T, self.n_facets), x[nk + na:nk + na + ne])
        return float(x[-1]), mult

    def free_solution(self):
        """Best multipliers with every unknown facet multiplier held at zero."""
        if self._free_solution is None:
            self._free_solution = self.solve_multipliers(None, None)
        return self._free_solution

    def certify(self, theta, delta: float = DEFAULT_DELTA_KKT):
        """Return ``(consistent, multipliers, report)`` at one parameter."""
        theta = np.asarray(theta, dtype=float)
        _, mult0 = self.free_solution()
        rep0 = self.residuals(theta, mult0, delta)
        if rep0.consistent or rep0.primal_residual > delta:
            return rep0.consistent, mult0, rep0
        fv = self.unknown_values(theta).ravel()
        _, mult = self.solve_multipliers(np.ones(fv.size, dtype=bool), fv)
        rep = self.residuals(theta, mult, delta)
        if rep.max_residual > rep0.max_residual:
            return rep0.consistent, mult0, rep0
        return rep.consistent, mult, rep

    def robust_consistent(self, box: Box, delta: float = DEFAULT_DELTA_KKT) -> bool:
        """One multiplier set certifies every parameter in ``box``.

        A facet whose parameter coordinate has positive width varies over the
        box, so complementary slackness forces its multiplier to zero.
        """
        if self.robust_unknown_primal(box) > delta or self._known_primal > delta:
            return False
        val, mult = self.free_solution()
        if val <= delta:
            rep = self.residuals(box.lo, mult, delta)
            if max(rep.comp_slack_residual, rep.stationarity_residual) <= delta:
                return True
        pinned = box.hi <= box.lo
        fac_pinned = pinned[self.model.facet_theta]
        allowed = np.tile(fac_pinned, self.T)
        if not np.any(allowed):
            return False
        fv = self.unknown_values(box.lo).ravel()
        val, mult = self.solve_multipliers(allowed, fv)
        if not np.isfinite(val):
            return False
        rep = self.residuals(box.lo, mult, delta)
        return max(rep.comp_slack_residual, rep.stationarity_residual) <= delta


def kkt_residuals(traj: Trajectory, theta, mult: Multipliers, task: Task, model: ConstraintModel,
                  delta: float = DEFAULT_DELTA_KKT) -> KktReport:
    return KktSystem(traj, task, model).residuals(theta, mult, delta)


def certify_local_opt(traj: Trajectory, theta, task: Task, model: ConstraintModel,
                      delta: float = DEFAULT_DELTA_KKT):
    """Return ``(consistent, multipliers)`` for one demonstration at ``theta``."""
    ok, mult, _ = KktSystem(traj, task, model).certify(theta, delta)
    return ok, mult


def robust_box_consistent(theta_box: Box, demos, task: Task, model: ConstraintModel,
                          delta: float = DEFAULT_DELTA_KKT, systems=None) -> bool:
    """True iff every demonstration is KKT-consistent for every parameter in the box."""
    if systems is None:
        systems = [KktSystem(d, task, model) for d in demos]
    return all(s.robust_consistent(theta_box, delta) for s in systems)


# ---------------------------------------------------------------- demo synthesis


class NonConvergenceError(RuntimeError):
    def __init__(self, residual: float):
        super().__init__(f"demonstration refinement did not converge (final residual {residual:.3g})")
        self.residual = residual


class InfeasibleTaskError(RuntimeError):
    pass


@dataclass
class RefineConfig:
    """Knobs of the penalty refinement; none of them is dictated by the method."""

    penalty0: float = 10.0
    penalty_growth: float = 10.0
    max_outer: int = 50
    max_inner: int = 400
    max_penalty: float = 1e8


def _selected_constraints(task: Task, model: ConstraintModel, theta, states, controls):
    """Pick, per timestep and obstacle, the facet most clearly satisfied at the seed.

    Returns a list of ``(kind, t, index, sign, offset)`` with the affine
    constraint ``sign * (coord - offset) <= 0`` (kind ``"x"``: state coordinate
    ``index``; kind ``"u2"``: squared control norm).
    """
    dyn = task.dynamics
    T = states.shape[0]
    m = dyn.control_dim
    u_pad = np.vstack([controls, np.zeros((1, m))])
    kap = model.kappa(states, u_pad)
    out = []
    fv = model.facet_values(theta, kap)
    for t in range(T):
        for o, idx in enumerate(model.obstacle_facets):
            f = idx[int(np.argmin(fv[t, idx]))]
            mc = int(model.facet_coord[f])
            blk = model.obstacle_block[o]
            local = mc - blk.kappa_offset
            if blk.phi == "control-norm-squared":
                if t < T - 1:
                    out.append(("u2", t, 0, 1.0, float(theta[model.facet_theta[f]])))
                continue
            out.append(("x", t, local, float(model.facet_sign[f]), float(theta[model.facet_theta[f]])))
        p = states[t, : dyn.dim]
        for b in task.known_unsafe:
            vals = np.concatenate([p - b.lo, b.hi - p])
            k = int(np.argmin(vals))
            if k < dyn.dim:
                out.append(("x", t, k, 1.0, float(b.lo[k])))
            else:
                out.append(("x", t, k - dyn.dim, -1.0, float(b.hi[k - dyn.dim])))
    return out


def synthesize_demo(task: Task, model: ConstraintModel, theta_true, tol: float = 1e-6,
                    seed: int = 0, config: RefineConfig | None = None, lattice=None) -> Trajectory:
    """Locally optimal demonstration under ``theta_true``.

    A lattice path seeds an augmented-Lagrangian gradient method over the
    controls (states follow by rollout, so dynamics hold exactly). The active
    set found there is then polished with Newton steps on its KKT system.
    """
    from .planning import Lattice, InfeasiblePlan, lattice_plan
    from .scenario import unsafe_region

    cfg = config or RefineConfig()
    theta_true = np.asarray(theta_true, dtype=float)
    dyn = task.dynamics
    if lattice is None:
        lattice = Lattice.default_for(task)
    forbidden = unsafe_region(model, Box(theta_true, theta_true))
    try:
        seed_traj = lattice_plan(task, forbidden, lattice, model=model)
    except InfeasiblePlan as exc:
        raise InfeasibleTaskError(str(exc)) from None

    T, m = task.T, dyn.control_dim
    A, B = dyn.matrices()
    cons = _selected_constraints(task, model, theta_true, seed_traj.states, seed_traj.controls)

    def states_of(u):
        xs = [task.x0]
        for t in range(T - 1):
            xs.append(A @ xs[-1] + B @ u[t])
        return np.array(xs)

    def cons_values(xs, u):
        vals = []
        for kind, t, i, sgn, off in cons:
            if kind == "x":
                vals.append(sgn * (xs[t, i] - off))
            else:
                vals.append(float(u[t] @ u[t]) - off)
        sb, cb = dyn.state_bounds, dyn.control_bounds
        vals.extend((sb.lo - xs).ravel())
        vals.extend((xs - sb.hi).ravel())
        vals.extend((cb.lo - u).ravel())
        vals.extend((u - cb.hi).ravel())
        return np.array(vals)

    # sensitivity of states to controls: x_t = A^t x0 + sum_k A^(t-1-k) B u_k
    S = np.zeros((T, dyn.state_dim, T - 1, m))
    for t in range(1, T):
        for k in range(t):
            S[t, :, k, :] = np.linalg.matrix_power(A, t - 1 - k) @ B

    def cons_jac(xs, u):
        rows = []
        for kind, t, i, sgn, off in cons:
            r = np.zeros((T - 1, m))
            if kind == "x":
                r += sgn * S[t, i]
            else:
                r[t] = 2.0 * u[t]
            rows.append(r.ravel())
        n = dyn.state_dim
        Sx = S.reshape(T * n, (T - 1) * m)
        rows.extend(-Sx)
        rows.extend(Sx)
        eye = np.eye((T - 1) * m)
        rows.extend(-eye)
        rows.extend(eye)
        return np.array(rows)

    Sg = S[T - 1].reshape(dyn.state_dim, (T - 1) * m)

    def objective(u, lam, mu, rho):
        xs = states_of(u)
        c = task.cost_value(xs, u)
        gs, gu = task.cost_grad(xs, u)
        grad = gu.ravel() + np.einsum("ti,tikm->km", gs, S).ravel()
        h = xs[-1] - task.xg
        c += mu @ h + 0.5 * rho * h @ h
        grad += Sg.T @ (mu + rho * h)
        gv = cons_values(xs, u)
        shifted = np.maximum(0.0, lam + rho * gv)
        c += (shifted @ shifted - lam @ lam) / (2 * rho)
        grad += cons_jac(xs, u).T @ shifted
        return c, grad

    u = seed_traj.controls.reshape(T - 1, m).copy()
    lam = np.zeros(cons_values(states_of(u), u).size)
    mu = np.zeros(dyn.state_dim)
    rho = cfg.penalty0
    for _ in range(cfg.max_outer):
        step = 1.0
        for _ in range(cfg.max_inner):
            f0, g0 = objective(u, lam, mu, rho)
            gn = float(g0 @ g0)
            if gn < 1e-20:
                break
            while step > 1e-14:
                cand = u - step * g0.reshape(u.shape)
                f1, _ = objective(cand, lam, mu, rho)
                if f1 <= f0 - 1e-4 * step * gn:
                    break
                step *= 0.5
            u = cand
            step *= 2.0
        xs = states_of(u)
        gv = cons_values(xs, u)
        h = xs[-1] - task.xg
        lam = np.maximum(0.0, lam + rho * gv)
        mu = mu + rho * h
        if max(np.max(np.abs(h)), np.max(gv, initial=0.0)) < 1e-3:
            break
        rho = min(rho * cfg.penalty_growth, cfg.max_penalty)

    u = _polish(task, u, cons, states_of, cons_values, cons_jac, Sg, objective_grad=lambda uu: _cost_grad_u(task, uu, states_of, S))
    traj = Trajectory(states_of(u), u)
    sysk = KktSystem(traj, task, model)
    ok, _, rep = sysk.certify(theta_true, tol)
    if not ok:
        raise NonConvergenceError(rep.max_residual)
    return traj


def _cost_grad_u(task, u, states_of, S):
    xs = states_of(u)
    gs, gu = task.cost_grad(xs, u)
    return gu.ravel() + np.einsum("ti,tikm->km", gs, S).ravel()


def _polish(task, u, cons, states_of, cons_values, cons_jac, Sg, objective_grad, iters: int = 30):
    """Newton steps on the KKT system of the currently active constraints."""
    shape = u.shape
    nvar = u.size
    best = u
    for _ in range(iters):
        xs = states_of(u)
        gv = cons_values(xs, u)
        active = np.flatnonzero(gv > -1e-5)
        J = cons_jac(xs, u)[active]
        Jeq = np.vstack([Sg, J]) if active.size else Sg
        r = np.concatenate([xs[-1] - task.xg, gv[active]])
        grad = objective_grad(u)
        # finite-difference Hessian of the cost plus curvature of quadratic constraints
        H = np.zeros((nvar, nvar))
        eps = 1e-6
        for k in range(nvar):
            e = np.zeros(nvar)
            e[k] = eps
            H[:, k] = (objective_grad((u.ravel() + e).reshape(shape)) - objective_grad((u.ravel() - e).reshape(shape))) / (2 * eps)
        H = 0.5 * (H + H.T) + 1e-12 * np.eye(nvar)
        K = np.block([[H, Jeq.T], [Jeq, np.zeros((Jeq.shape[0], Jeq.shape[0]))]])
        rhs = -np.concatenate([grad, r])
        try:
            sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
        except np.linalg.LinAlgError:
            break
        du = sol[:nvar]
        lam = sol[nvar + Sg.shape[0]:]
        # curvature of quadratic (control norm) constraints
        quad = [k for k, a in enumerate(active) if a < len(cons) and cons[a][0] == "u2"]
        if quad:
            for k in quad:
                t = cons[active[k]][1]
                blk = slice(t * shape[1], (t + 1) * shape[1])
                H[blk, blk] += 2.0 * max(lam[k], 0.0) * np.eye(shape[1])
            K = np.block([[H, Jeq.T], [Jeq, np.zeros((Jeq.shape[0], Jeq.shape[0]))]])
            sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
            du = sol[:nvar]
        u = (u.ravel() + du).reshape(shape)
        best = u
        if np.max(np.abs(du)) < 1e-13:
            break
    return best
