"""Uniform belief over the consistent parameter set and its sensing updates.

Under an offset model the parameters that make one constraint point unsafe
form, per obstacle, an open box: every lower offset below the point's
coordinate and every upper offset above it. All updates are built from these
boxes with box-union arithmetic, so supports stay exact unions of boxes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (
    Box,
    BoxUnion,
    coalesce,
    disjointify,
    intersect_box,
    intersect_unions,
    sample_uniform,
    subtract,
    subtract_union,
    union_contains,
)
from .scenario import STRICT_TOL, ConstraintModel, Trajectory, path_points

MEASUREMENT_KINDS = ("exact-safe", "exact-unsafe", "ambiguous-unsafe", "ambiguous-safe")
EMPTY_TOL = 1e-15


class EmptyBeliefError(ValueError):
    """Probability query on a belief with no mass."""


@dataclass(frozen=True)
class Measurement:
    kind: str
    points: np.ndarray

    def __post_init__(self):
        if self.kind not in MEASUREMENT_KINDS:
            raise ValueError(f"unknown measurement kind {self.kind!r}")
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.shape[0] == 0:
            raise ValueError("a measurement needs at least one point")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    def holds(self, model: ConstraintModel, thetas) -> np.ndarray:
        """Does each parameter satisfy the measured predicate?"""
        unsafe = model.g_many(thetas, self.points) > STRICT_TOL
        if self.kind == "exact-safe":
            return ~unsafe.any(axis=1)
        if self.kind == "exact-unsafe":
            return unsafe.all(axis=1)
        if self.kind == "ambiguous-unsafe":
            return unsafe.any(axis=1)
        return ~unsafe.all(axis=1)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "points": self.points.tolist()}


class Belief:
    """Uniform density on ``support``; flagged empty when the support has no volume.

    The support point-set is kept even when empty so guaranteed-set queries
    still work.
    """

    def __init__(self, support: BoxUnion):
        self.support = support
        self.total_volume = float(sum(b.volume() for b in support))

    @property
    def is_empty(self) -> bool:
        return self.total_volume <= EMPTY_TOL

    @property
    def dim(self) -> int:
        return self.support.dim

    def density(self) -> float:
        self._require_mass()
        return 1.0 / self.total_volume

    def atoms(self) -> list[Box]:
        """Positive-volume support boxes, largest mass first then lexicographic."""
        boxes = [b for b in self.support if b.volume() > 0]
        return sorted(boxes, key=lambda b: (-b.volume(), tuple(b.lo.tolist())))

    def _require_mass(self):
        if self.is_empty:
            raise EmptyBeliefError("belief is EMPTY; the parameterization cannot explain the data")

    def to_dict(self) -> dict:
        return {"dim": self.dim, "empty": self.is_empty, "boxes": self.support.to_list()}


def belief_from_extraction(result) -> Belief:
    f = result.f_theta if hasattr(result, "f_theta") else result
    return Belief(f)


def prob_of(belief: Belief, theta_box: Box) -> float:
    belief._require_mass()
    inter = intersect_box(belief.support, theta_box)
    return min(1.0, max(0.0, sum(b.volume() for b in inter) / belief.total_volume))


def sample_belief(belief: Belief, n: int, seed) -> np.ndarray:
    belief._require_mass()
    return sample_uniform(belief.support, n, seed)


# ------------------------------------------------------------------ unsafe-parameter boxes


def _local_unsafe_box(model: ConstraintModel, o: int, point, lo0, hi0) -> Box | None:
    """Closed proxy (local obstacle coordinates) of the open box of offsets
    for which obstacle ``o`` strictly contains ``point``."""
    fac = model.obstacle_facets[o]
    kap = np.asarray(point, dtype=float)[model.facet_coord[fac]]
    sign = model.facet_sign[fac]
    lo = np.where(sign > 0, lo0, np.maximum(kap, lo0))
    hi = np.where(sign > 0, np.minimum(kap, hi0), hi0)
    if np.any(hi <= lo):
        return None
    return Box(lo, hi)


def unsafe_parameter_boxes(model: ConstraintModel, point, frame: Box) -> list[Box]:
    """Full-dimension boxes (clipped to ``frame``) of parameters making ``point`` unsafe.

    One box per obstacle; they may overlap each other.
    """
    out = []
    for o in range(model.n_obstacles):
        coords = model.facet_theta[model.obstacle_facets[o]]
        b = _local_unsafe_box(model, o, point, frame.lo[coords], frame.hi[coords])
        if b is None:
            continue
        lo, hi = frame.lo.copy(), frame.hi.copy()
        lo[coords] = b.lo
        hi[coords] = b.hi
        out.append(Box(lo, hi))
    return out


def unsafe_parameters(model: ConstraintModel, point, frame: Box) -> BoxUnion:
    return disjointify(unsafe_parameter_boxes(model, point, frame), dim=model.theta_dim)


def update(belief: Belief, m: Measurement, model: ConstraintModel) -> Belief:
    """Condition the belief on a measurement; the result may be EMPTY."""
    frame = model.theta_prior
    if not belief.support.is_empty():
        hull = belief.support.hull()
        frame = Box(np.minimum(frame.lo, hull.lo), np.maximum(frame.hi, hull.hi))
    support = belief.support
    if m.kind == "exact-safe":
        for p in m.points:
            for b in unsafe_parameter_boxes(model, p, frame):
                support = subtract(support, b)
    elif m.kind == "exact-unsafe":
        for p in m.points:
            support = intersect_unions(support, unsafe_parameters(model, p, frame))
    elif m.kind == "ambiguous-unsafe":
        boxes = []
        for p in m.points:
            boxes.extend(unsafe_parameter_boxes(model, p, frame))
        support = intersect_unions(support, disjointify(boxes, dim=model.theta_dim)) if boxes \
            else BoxUnion([], dim=model.theta_dim)
    else:
        everywhere = None
        for p in m.points:
            u = unsafe_parameters(model, p, frame)
            everywhere = u if everywhere is None else intersect_unions(everywhere, u)
            if everywhere.is_empty():
                break
        support = subtract_union(support, everywhere)
    if len(support) > 1:
        support = coalesce(support)
    return Belief(support)


def update_many(belief: Belief, measurements, model: ConstraintModel) -> Belief:
    for m in measurements:
        belief = update(belief, m, model)
    return belief


# ------------------------------------------------------------------ trajectory safety


def _safe_local_volume(model: ConstraintModel, o: int, local: Box, points) -> float:
    region = BoxUnion([local])
    seen = set()
    for p in points:
        b = _local_unsafe_box(model, o, p, local.lo, local.hi)
        if b is None:
            continue
        key = b.as_tuple()
        if key in seen:
            continue
        seen.add(key)
        region = subtract(region, b)
        if region.is_empty():
            return 0.0
    return float(sum(r.volume() for r in region))


def safe_mass(support: BoxUnion, points, model: ConstraintModel) -> float:
    """Volume of the support on which no point is unsafe.

    Obstacles own disjoint parameter coordinates, so within one support box
    the safe set is a product over obstacles.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    total = 0.0
    coords = [model.facet_theta[idx] for idx in model.obstacle_facets]
    for b in support:
        vol = b.volume()
        if vol <= 0:
            continue
        prod = 1.0
        for o, c in enumerate(coords):
            local = Box(b.lo[c], b.hi[c])
            v = _safe_local_volume(model, o, local, points)
            prod *= v / local.volume()
            if prod == 0.0:
                break
        total += vol * prod
    return total


def prob_points_safe(belief: Belief, points, model: ConstraintModel) -> float:
    belief._require_mass()
    return min(1.0, safe_mass(belief.support, points, model) / belief.total_volume)


def prob_traj_safe(belief: Belief, traj: Trajectory, model: ConstraintModel, spacing: float) -> float:
    """Exact probability that the trajectory (sampled at ``spacing``) is safe."""
    pts, _ = path_points(model, traj, spacing)
    return prob_points_safe(belief, pts, model)


def prob_traj_safe_mc(belief: Belief, traj: Trajectory, model: ConstraintModel, spacing: float,
                      n: int = 10_000, seed=0) -> tuple[float, float]:
    """Monte Carlo estimate and its 3-sigma half-width."""
    pts, _ = path_points(model, traj, spacing)
    thetas = sample_belief(belief, n, seed)
    safe = ~model.unsafe_many(thetas, pts)
    p = float(safe.mean())
    return p, 3.0 * float(np.sqrt(max(p * (1 - p), 1e-12) / n))


def support_contains(belief: Belief, thetas) -> np.ndarray:
    return union_contains(belief.support, thetas)
