"""Small builders shared by the test modules."""

import numpy as np

from artifact.geometry import Box, BoxUnion
from artifact.scenario import ConstraintModel, Dynamics, Task, read_scenario, example_path, rollout

ORACLE_H = 0.05


def shipped(name):
    return read_scenario(example_path(name))


def plane(bounds=10.0, umax=2.0):
    return Dynamics("single-integrator", 2, 1.0, Box([0, 0], [bounds, bounds]), Box([-umax, -umax], [umax, umax]))


def one_box_model(prior, dyn=None):
    dyn = dyn or plane()
    return ConstraintModel(["state-projection"], [1], prior, dyn)


def straight_demo(dyn, x0, xg, T):
    x0, xg = np.asarray(x0, dtype=float), np.asarray(xg, dtype=float)
    u = (xg - x0) / ((T - 1) * dyn.dt)
    return rollout(dyn, x0, np.tile(u, (T - 1, 1)))


def _on_grid(rng, a, b, size=None):
    return np.round(rng.uniform(a, b, size) / ORACLE_H) * ORACLE_H


def random_extraction_scenario(seed):
    """2-D one-obstacle scenario whose demos cut through the obstacle prior.

    Coordinates are drawn on the oracle grid so the oracle's own
    discretization error is zero and any mismatch is the extractor's.
    Demos are straight sweeps across the workspace, horizontal and vertical
    in turn, each placed inside the range of one facet of the prior.
    """
    rng = np.random.default_rng(seed)
    dyn = plane()
    lo = _on_grid(rng, 2.5, 3.5, 2)
    hi = _on_grid(rng, 5.5, 6.5, 2)
    w = _on_grid(rng, 0.9, 1.3, 4)
    prior = Box(np.concatenate([lo, hi - w[2:]]), np.concatenate([lo + w[:2], hi]))
    model = one_box_model(prior, dyn)
    demos = []
    for k in range(int(rng.integers(1, 4))):
        axis = k % 2
        face = axis + 2 * int(rng.integers(2))
        c = float(_on_grid(rng, prior.lo[face] + ORACLE_H, prior.hi[face] - ORACLE_H))
        x0, xg = np.zeros(2), np.full(2, 10.0)
        x0[axis] = xg[axis] = c
        demos.append(straight_demo(dyn, x0, xg, 11))
    task = Task(dyn, 11, "sum-squared-control", demos[0].states[0], demos[0].states[-1], BoxUnion([], dim=2))
    return task, model, demos


def random_union(rng, dim=2, n=3, span=4.0):
    """Interior-disjoint union built by disjointifying random boxes."""
    from artifact.geometry import disjointify

    boxes = []
    for _ in range(n):
        lo = rng.uniform(0, span, dim)
        boxes.append(Box(lo, lo + rng.uniform(0.2, 2.0, dim)))
    return disjointify(boxes, dim=dim)
