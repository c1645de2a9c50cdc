"""Extraction of every demonstration-consistent constraint parameter.

Three engines produce the consistent set as a union of boxes:

``enumerate``
    Exact. Primal feasibility removes, per obstacle and demo point, the open
    box of offsets that would swallow the point. Stationarity is independent
    of the parameters; it only depends on which facet multipliers may be
    nonzero, and a facet may carry force only when its offset is pinned to a
    demo coordinate. Minimal sets of such pins are found by breadth-first
    search over linear programs, and every feasible pin set contributes the
    primal region restricted to its pinned hyperplanes.
``carve``
    The iterative scheme: find a maximum-volume consistent box inside the
    not-yet-extracted region, remove it, repeat until nothing consistent is
    left. Candidate boxes are grown from the exact pieces.
``grid``
    Cell-center oracle used for testing.
"""

from __future__ import annotations

import itertools
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    Box,
    BoxUnion,
    coalesce,
    covers,
    disjointify,
    intersect_unions,
    subtract,
    subtract_union,
    union_of,
    split_longest,
    union_interior_contains,
)
from .kkt import DEFAULT_DELTA_KKT, KktSystem
from .scenario import ConstraintModel, Task, inner_unsafe_region

PIN_TOL = 1e-6
ITERATION_CAP = 10_000
ENGINES = ("enumerate", "carve", "grid")


class ExtractionError(RuntimeError):
    """Raised when an engine hits its work cap."""


@dataclass
class ExtractionResult:
    f_theta: BoxUnion
    iterations: int
    engine: str
    wall_time: float = 0.0

    def is_empty(self) -> bool:
        return self.f_theta.is_empty()

    def to_dict(self) -> dict:
        return {"engine": self.engine, "iterations": self.iterations,
                "dim": self.f_theta.dim, "boxes": self.f_theta.to_list()}


@dataclass
class GuaranteedSets:
    g_safe: BoxUnion
    g_unsafe: BoxUnion
    possibly_unsafe: BoxUnion

    def to_dict(self) -> dict:
        return {"g_safe": self.g_safe.to_dict(), "g_unsafe": self.g_unsafe.to_dict(),
                "possibly_unsafe": self.possibly_unsafe.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "GuaranteedSets":
        return cls(*(BoxUnion.from_dict(d[k]) for k in ("g_safe", "g_unsafe", "possibly_unsafe")))

    def classify(self, points) -> np.ndarray:
        """0 guaranteed safe, 1 possibly unsafe, 2 guaranteed unsafe.

        Points on the boundary of an unsafe box count as safe, matching the
        strict inequality of the unsafe set.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        labels = np.zeros(pts.shape[0], dtype=int)
        both = BoxUnion(list(self.possibly_unsafe) + list(self.g_unsafe), dim=pts.shape[1])
        labels[union_interior_contains(both, pts)] = 1
        labels[union_interior_contains(self.g_unsafe, pts)] = 2
        return labels


# ------------------------------------------------------------------ primal region


def _obstacle_primal(model: ConstraintModel, prior: Box, o: int, kappa: np.ndarray) -> BoxUnion:
    """Offsets of obstacle ``o`` (local coordinates) that keep every point outside."""
    fac = model.obstacle_facets[o]
    coords = model.facet_theta[fac]
    lo0, hi0 = prior.lo[coords], prior.hi[coords]
    region = BoxUnion([Box(lo0, hi0)])
    kap = kappa[:, model.facet_coord[fac]]
    sign = model.facet_sign[fac]
    seen = set()
    for row in kap:
        # open box of offsets for which the point lies strictly inside
        lo = np.where(sign > 0, lo0, np.maximum(row, lo0))
        hi = np.where(sign > 0, np.minimum(row, hi0), hi0)
        if np.any(hi <= lo):
            continue
        key = tuple(lo) + tuple(hi)
        if key in seen:
            continue
        seen.add(key)
        region = subtract(region, Box(lo, hi))
        if region.is_empty():
            break
    return coalesce(region) if len(region) > 1 else region


def _product(model: ConstraintModel, per_obstacle: list) -> list[Box]:
    """Cartesian product of per-obstacle local unions as full parameter boxes."""
    coords = [model.facet_theta[idx] for idx in model.obstacle_facets]
    out = []
    for combo in itertools.product(*[u.boxes for u in per_obstacle]):
        lo = np.empty(model.theta_dim)
        hi = np.empty(model.theta_dim)
        for c, b in zip(coords, combo):
            lo[c] = b.lo
            hi[c] = b.hi
        out.append(Box(lo, hi))
    return out


# ------------------------------------------------------------------ pin search


@dataclass
class _PinSearch:
    systems: list
    model: ConstraintModel
    prior: Box
    delta: float
    primal: list  # per-obstacle local unions
    max_lp: int = 20000
    lp_calls: int = field(default=0, init=False)

    def candidate_pins(self) -> list[tuple[int, float]]:
        model = self.model
        pins = []
        for f in range(model.n_facets):
            c = int(model.facet_theta[f])
            m = int(model.facet_coord[f])
            o = int(model.facet_obs[f])
            local = int(np.flatnonzero(model.facet_theta[model.obstacle_facets[o]] == c)[0])
            vals = np.concatenate([s.kappa[:, m] for s in self.systems])
            vals = vals[(vals >= self.prior.lo[c] - PIN_TOL) & (vals <= self.prior.hi[c] + PIN_TOL)]
            for v in np.unique(np.round(vals, 12)):
                v = float(np.clip(v, self.prior.lo[c], self.prior.hi[c]))
                # the pinned hyperplane must meet the primal region
                if any(b.lo[local] - PIN_TOL <= v <= b.hi[local] + PIN_TOL for b in self.primal[o]):
                    pins.append((c, v))
        return pins

    def _allowed(self, system: KktSystem, pins) -> np.ndarray:
        model = self.model
        mask = np.zeros((system.T, model.n_facets), dtype=bool)
        for c, v in pins:
            f = np.flatnonzero(model.facet_theta == c)
            for ff in f:
                m = model.facet_coord[ff]
                mask[:, ff] |= np.abs(system.kappa[:, m] - v) <= PIN_TOL
        return mask.ravel()

    def feasible(self, pins) -> bool:
        theta = self.prior.center.copy()
        for c, v in pins:
            theta[c] = v
        for s in self.systems:
            val, _ = s.free_solution()
            if val <= self.delta:
                continue
            allowed = self._allowed(s, pins)
            if not allowed.any():
                return False
            self.lp_calls += 1
            if self.lp_calls > self.max_lp:
                raise ExtractionError("activation-pattern search exceeded its linear-program budget")
            fv = np.abs(s.unknown_values(theta)).ravel()
            fv[allowed] = np.minimum(fv[allowed], PIN_TOL)
            val, mult = s.solve_multipliers(allowed, np.where(allowed, 0.0, fv))
            if not val <= self.delta:
                return False
        return True

    def minimal_sets(self, max_size: int | None = None) -> list[tuple]:
        if self.feasible(()):
            return [()]
        pins = self.candidate_pins()
        max_size = self.model.theta_dim if max_size is None else max_size
        found: list[tuple] = []
        frontier: list[tuple] = [()]
        for _ in range(max_size):
            nxt = []
            for base in frontier:
                start = base[-1] + 1 if base else 0
                used = {pins[i][0] for i in base}
                for i in range(start, len(pins)):
                    if pins[i][0] in used:
                        continue
                    cand = base + (i,)
                    if any(set(f) <= set(cand) for f in found):
                        continue
                    chosen = [pins[k] for k in cand]
                    if self.feasible(chosen):
                        found.append(cand)
                    else:
                        nxt.append(cand)
            frontier = nxt
            if not frontier:
                break
        return [tuple(pins[k] for k in f) for f in found]


def _restrict_to_pins(box: Box, pins) -> Box | None:
    lo, hi = box.lo.copy(), box.hi.copy()
    for c, v in pins:
        if v < lo[c] - PIN_TOL or v > hi[c] + PIN_TOL:
            return None
        lo[c] = hi[c] = min(max(v, lo[c]), hi[c])
    return Box(lo, hi)


def _enumerate(demos, task: Task, model: ConstraintModel, delta: float, prior: Box,
               keep_degenerate: bool, systems=None) -> tuple[BoxUnion, int]:
    if not demos:
        return BoxUnion([prior]), 1
    systems = systems or [KktSystem(d, task, model) for d in demos]
    if any(s._known_primal > delta for s in systems):
        return BoxUnion([], dim=model.theta_dim), 0
    kappa = np.vstack([s.kappa for s in systems])
    primal = [_obstacle_primal(model, prior, o, kappa) for o in range(model.n_obstacles)]
    if any(p.is_empty() for p in primal):
        return BoxUnion([], dim=model.theta_dim), 0
    search = _PinSearch(systems, model, prior, delta, primal)
    pin_sets = search.minimal_sets()
    boxes = []
    base = _product(model, primal)
    for pins in pin_sets:
        for b in base:
            r = _restrict_to_pins(b, pins) if pins else b
            if r is None:
                continue
            if not keep_degenerate and r.volume() <= 0:
                continue
            boxes.append(r)
    f = disjointify(boxes, dim=model.theta_dim) if boxes else BoxUnion([], dim=model.theta_dim)
    return f, len(pin_sets)


# ------------------------------------------------------------------ carve


def _rank_key(b: Box):
    return (-b.volume(), tuple(b.lo.tolist()), tuple(b.hi.tolist()))


def _grow(seed: Box, region: BoxUnion) -> Box:
    """Grow ``seed`` one face at a time while it stays inside ``region``."""
    lo, hi = seed.lo.copy(), seed.hi.copy()
    for c in range(seed.dim):
        if hi[c] <= lo[c] and seed.is_degenerate():
            # pinned coordinate of a lower-dimensional piece stays pinned
            continue
        vals = sorted({v for b in region for v in (b.lo[c], b.hi[c])})
        for v in sorted((x for x in vals if x < lo[c]), reverse=True):
            trial_lo = lo.copy()
            trial_lo[c] = v
            if covers(region, Box(trial_lo, hi)):
                lo = trial_lo
            else:
                break
        for v in (x for x in vals if x > hi[c]):
            trial_hi = hi.copy()
            trial_hi[c] = v
            if covers(region, Box(lo, trial_hi)):
                hi = trial_hi
            else:
                break
    return Box(lo, hi)


def max_box(remaining: BoxUnion, demos, task: Task, model: ConstraintModel,
            delta: float = DEFAULT_DELTA_KKT, candidates: BoxUnion | None = None,
            n_seeds: int = 8, systems=None) -> Box | None:
    """Largest consistent box inside ``remaining`` among grown candidates.

    ``candidates`` is the exact consistent set; it is computed when omitted.
    Ties are broken lexicographically on the lower corner.
    """
    if candidates is None:
        candidates, _ = _enumerate(demos, task, model, delta, model.theta_prior, True, systems)
    region = intersect_unions(candidates, remaining)
    if region.is_empty():
        return None
    seeds = sorted(region.boxes, key=_rank_key)[:n_seeds]
    grown = [_grow(s, region) for s in seeds]
    best = min(grown, key=_rank_key)
    return best


def _carve(demos, task: Task, model: ConstraintModel, delta: float, prior: Box,
           keep_degenerate: bool, systems=None) -> tuple[BoxUnion, int]:
    exact, _ = _enumerate(demos, task, model, delta, prior, keep_degenerate, systems)
    region = exact
    extracted: list[Box] = []
    iterations = 0
    while not region.is_empty():
        iterations += 1
        if iterations > ITERATION_CAP:
            raise ExtractionError("carve engine exceeded its iteration cap")
        seeds = sorted(region.boxes, key=_rank_key)[:8]
        grown = [_grow(s, region) for s in seeds]
        box = min(grown, key=_rank_key)
        extracted.append(box)
        nxt = subtract(region, box)
        if len(nxt) == len(region) and all(a == b for a, b in zip(nxt, region)):
            raise ExtractionError("carve step removed nothing from the remaining region")
        region = nxt
    return BoxUnion(extracted, dim=model.theta_dim), iterations


# ------------------------------------------------------------------ grid oracle


def grid_oracle(demos, task: Task, model: ConstraintModel, delta: float = DEFAULT_DELTA_KKT,
                h: float = 0.05, max_cells: int = 2_000_000, prior: Box | None = None) -> BoxUnion:
    """Union of grid cells whose centers pass the per-point KKT certificate."""
    prior = prior or model.theta_prior
    counts = np.maximum(1, np.round(prior.widths / h).astype(int))
    n_cells = int(np.prod(counts))
    if n_cells > max_cells:
        raise ExtractionError(f"grid oracle needs {n_cells} cells, cap is {max_cells}")
    edges = [np.linspace(prior.lo[i], prior.hi[i], counts[i] + 1) for i in range(prior.dim)]
    mesh = np.meshgrid(*[0.5 * (e[:-1] + e[1:]) for e in edges], indexing="ij")
    centers = np.stack([m.ravel() for m in mesh], axis=1)
    idx = np.stack([m.ravel() for m in np.meshgrid(*[np.arange(c) for c in counts], indexing="ij")], axis=1)
    ok = np.ones(centers.shape[0], dtype=bool)
    systems = [KktSystem(d, task, model) for d in demos]
    for s in systems:
        if s._known_primal > delta:
            ok[:] = False
            break
        chunk = max(1, 200000 // max(1, s.T * model.n_facets))
        for a in range(0, centers.shape[0], chunk):
            g = model.g_many(centers[a:a + chunk], s.kappa)
            ok[a:a + chunk] &= g.max(axis=1) <= delta
    for s in systems:
        val, _ = s.free_solution()
        if val <= delta:
            continue
        for k in np.flatnonzero(ok):
            good, _, _ = s.certify(centers[k], delta)
            ok[k] = good
    boxes = []
    for k in np.flatnonzero(ok):
        lo = [edges[i][idx[k, i]] for i in range(prior.dim)]
        hi = [edges[i][idx[k, i] + 1] for i in range(prior.dim)]
        boxes.append(Box(lo, hi))
    return BoxUnion(boxes, dim=prior.dim)


# ------------------------------------------------------------------ public entry points


def extract(demos, task: Task, model: ConstraintModel, delta: float | None = None,
            engine: str = "enumerate", keep_degenerate: bool = True, prior: Box | None = None,
            grid_h: float = 0.05) -> ExtractionResult:
    """Consistent parameter set as an interior-disjoint union of boxes."""
    if engine not in ENGINES:
        raise ValueError(f"unknown engine {engine!r}; expected one of {ENGINES}")
    delta = task.delta_kkt if delta is None else delta
    prior = prior or model.theta_prior
    t0 = time.perf_counter()
    if engine == "enumerate":
        f, _ = _enumerate(list(demos), task, model, delta, prior, keep_degenerate)
        f = f if len(f) <= 1 else BoxUnion(sorted(f.boxes, key=lambda b: b.as_tuple()), dim=f.dim)
        iterations = len(f)
    elif engine == "carve":
        f, iterations = _carve(list(demos), task, model, delta, prior, keep_degenerate)
    else:
        f = grid_oracle(list(demos), task, model, delta, grid_h, prior=prior)
        iterations = len(f)
    return ExtractionResult(f, iterations, engine, time.perf_counter() - t0)


def _extract_part(args):
    demos, task, model, delta, engine, keep_degenerate, part = args
    return extract(demos, task, model, delta, engine, keep_degenerate, prior=part)


def extract_partitioned(demos, task: Task, model: ConstraintModel, delta: float | None = None,
                        M: int = 1, engine: str = "enumerate", keep_degenerate: bool = True,
                        n_jobs: int = 1) -> ExtractionResult:
    """Run :func:`extract` on ``M`` pieces of the prior and union the results."""
    if M < 1:
        raise ValueError("M must be at least 1")
    t0 = time.perf_counter()
    parts = split_longest(model.theta_prior, M)
    args = [(list(demos), task, model, delta, engine, keep_degenerate, p) for p in parts]
    if n_jobs > 1 and M > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_extract_part, args))
    else:
        results = [_extract_part(a) for a in args]
    union = BoxUnion([], dim=model.theta_dim)
    for r in results:
        union = union_of(union, r.f_theta) if union.boxes else r.f_theta
    return ExtractionResult(union, sum(r.iterations for r in results), engine, time.perf_counter() - t0)


def guaranteed_sets(result: ExtractionResult, model: ConstraintModel) -> GuaranteedSets:
    """Guaranteed-safe, guaranteed-unsafe and possibly-unsafe constraint states."""
    f = result.f_theta if isinstance(result, ExtractionResult) else result
    if f.is_empty():
        raise ValueError("guaranteed sets need a nonempty consistent set")
    g_unsafe = inner_unsafe_region(model, f.boxes[0])
    for b in f.boxes[1:]:
        if g_unsafe.is_empty():
            break
        g_unsafe = intersect_unions(g_unsafe, inner_unsafe_region(model, b))
    reach = []
    for b in f:
        reach.extend(x for x in model.obstacle_boxes(b) if x is not None)
    possibly = subtract_union(disjointify(reach, dim=model.kappa_dim), g_unsafe)
    everything = BoxUnion([model.kappa_bounds])
    g_safe = subtract_union(subtract_union(everything, g_unsafe), possibly)
    return GuaranteedSets(g_safe, g_unsafe, possibly)


class ConstraintExtractor:
    """Estimator-style wrapper: ``fit`` on demonstrations, ``predict`` safety labels.

    Follows the scikit-learn conventions (constructor stores parameters,
    fitted attributes end in an underscore, ``get_params``/``set_params``)
    without depending on it.

    Parameters
    ----------
    task, model : Task, ConstraintModel
        Problem the demonstrations solve.
    delta : float, optional
        KKT tolerance; defaults to the task's.
    engine : str
        One of ``ENGINES``.
    """

    def __init__(self, task: Task, model: ConstraintModel, delta: float | None = None,
                 engine: str = "enumerate"):
        self.task = task
        self.model = model
        self.delta = delta
        self.engine = engine

    def get_params(self, deep: bool = True) -> dict:
        return {"task": self.task, "model": self.model, "delta": self.delta, "engine": self.engine}

    def set_params(self, **params) -> "ConstraintExtractor":
        for k, v in params.items():
            if k not in self.get_params():
                raise ValueError(f"unknown parameter {k!r}")
            setattr(self, k, v)
        return self

    def fit(self, demos, y=None) -> "ConstraintExtractor":
        res = extract(demos, self.task, self.model, self.delta, self.engine)
        self.result_ = res
        self.f_theta_ = res.f_theta
        self.guaranteed_ = guaranteed_sets(res, self.model) if not res.is_empty() else None
        return self

    def predict(self, kappa) -> np.ndarray:
        """0 guaranteed safe, 1 possibly unsafe, 2 guaranteed unsafe."""
        if not hasattr(self, "result_"):
            raise RuntimeError("call fit before predict")
        if self.guaranteed_ is None:
            raise ValueError("the demonstrations admit no consistent parameter")
        return self.guaranteed_.classify(kappa)
