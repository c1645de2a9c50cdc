"""Regenerate the scenario files shipped in ``src/artifact/data``."""

import dataclasses
from pathlib import Path

import numpy as np

from artifact.geometry import Box, BoxUnion
from artifact.scenario import ConstraintModel, Dynamics, Task, rollout, save_scenario

OUT = Path(__file__).resolve().parents[1] / "src" / "artifact" / "data"


def desk(prior: Box, phi, n_obs, T_query: int, name: str):
    """Straight demo along the top edge; the query crosses the uncertain obstacle."""
    dyn = Dynamics("single-integrator", 2, 1.0, Box([0, 0], [10, 10]), Box([-2, -2], [2, 2]))
    task = Task(dyn, 11, "sum-squared-control", np.array([0.0, 9.0]), np.array([10.0, 9.0]),
                BoxUnion([], dim=2), resolution=0.5)
    model = ConstraintModel(phi, n_obs, prior, dyn)
    demo = rollout(dyn, task.x0, np.tile([1.0, 0.0], (10, 1)))
    query = dataclasses.replace(task, x0=np.array([0.0, 5.0]), xg=np.array([10.0, 5.0]), T=T_query)
    save_scenario(OUT / f"{name}.json", task, model, [demo], name, query)


def scalar_bound():
    dyn = Dynamics("single-integrator", 1, 1.0, Box([0], [100]), Box([-10], [10]))
    u = np.sqrt(97.85)
    task = Task(dyn, 2, "sum-squared-control", np.array([0.0]), np.array([u]), BoxUnion([], dim=1))
    model = ConstraintModel("control-norm-squared", 1, Box([0.0], [100.0]), dyn)
    demo = rollout(dyn, task.x0, np.array([[u]]))
    save_scenario(OUT / "scalar_bound.json", task, model, [demo], "scalar_bound")


def maze():
    """A wall with a long way round the top and a short gap at the bottom.

    The uncertain obstacle sits in the gap. A demo along the wall's lower
    face rules out tall obstacles that also reach far right, so the gap is
    blocked only for a small part of the consistent set.
    """
    dyn = Dynamics("single-integrator", 2, 1.0, Box([0, 0], [10, 10]), Box([-1, -1], [1, 1]))
    wall = BoxUnion([Box([4.5, 2.0], [5.5, 8.0])])
    task = Task(dyn, 5, "path-length", np.array([5.5, 2.0]), np.array([9.5, 2.0]), wall,
                resolution=0.5)
    prior = Box([4.4, -1.0, 5.45, 1.0], [4.6, -0.5, 5.6, 2.2])
    model = ConstraintModel("state-projection", 1, prior, dyn)
    demo = rollout(dyn, task.x0, np.tile([1.0, 0.0], (4, 1)))
    query = dataclasses.replace(task, x0=np.array([1.0, 1.0]), xg=np.array([9.0, 1.0]), T=26)
    save_scenario(OUT / "maze.json", task, model, [demo], "maze", query)


def sequential():
    """Two stacked contingencies: each bump reveals the obstacle reaches further up."""
    dyn = Dynamics("single-integrator", 2, 1.0, Box([0, 0], [10, 6]), Box([-1, -0.5], [1, 0.5]))
    task = Task(dyn, 23, "path-length", np.array([0.0, 0.0]), np.array([10.0, 0.0]),
                BoxUnion([], dim=2), resolution=0.5, connectivity="axis")
    prior = Box([1.5, -1.0, 4.0, 1.0], [2.0, -0.5, 4.5, 5.0])
    model = ConstraintModel("state-projection", 1, prior, dyn)
    save_scenario(OUT / "sequential.json", task, model, [], "sequential")


def walled_off():
    """The obstacle may span the whole height, so no guaranteed-safe path exists."""
    dyn = Dynamics("single-integrator", 2, 1.0, Box([0, 0], [10, 10]), Box([-2, -2], [2, 2]))
    task = Task(dyn, 11, "sum-squared-control", np.array([0.0, 5.0]), np.array([10.0, 5.0]),
                BoxUnion([], dim=2), resolution=0.5)
    prior = Box([4.0, -1.0, 5.5, 9.0], [4.5, 1.0, 6.0, 11.0])
    model = ConstraintModel("state-projection", 1, prior, dyn)
    save_scenario(OUT / "walled_off.json", task, model, [], "walled_off")


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    desk(Box([3.5, 2.0, 5.5, 5.5], [4.5, 4.5, 6.5, 9.5]), "state-projection", 1, 11, "toy_t1")
    desk(Box([3.5, 2.0, 5.5, 5.5, 2.0], [4.5, 4.5, 6.5, 9.5, 8.0]),
         ["state-projection", "control-norm-squared"], [1, 1], 11, "mixed_desk")
    scalar_bound()
    maze()
    sequential()
    walled_off()


if __name__ == "__main__":
    main()
