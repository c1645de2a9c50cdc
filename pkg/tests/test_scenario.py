import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from artifact.geometry import Box, BoxUnion, union_contains, union_interior_contains
from artifact.scenario import (
    EXAMPLES,
    ConstraintModel,
    Dynamics,
    ScenarioError,
    Trajectory,
    check_trajectory,
    g_value,
    inner_unsafe_region,
    parse_scenario,
    read_scenario,
    rollout,
    save_scenario,
    scenario_to_dict,
    unsafe_region,
    example_path,
)

from helpers import one_box_model, plane, shipped


def _minimal_1d():
    return {
        "version": 1,
        "dynamics": {"kind": "single-integrator", "dim": 1, "dt": 1.0,
                     "state_bounds": {"lo": [0.0], "hi": [5.0]}, "control_bounds": {"lo": [-1.0], "hi": [1.0]}},
        "task": {"T": 4, "cost": "sum-squared-control", "x0": [0.0], "xg": [3.0], "known_unsafe": []},
        "model": {"phi": "state-projection", "n_obs": 1, "theta_prior": {"lo": [1.0, 2.0], "hi": [2.0, 3.0]}},
        "demos": [],
    }


def _scalar_model():
    dyn = Dynamics("single-integrator", 1, 1.0, Box([0], [100]), Box([-10], [10]))
    return ConstraintModel(["control-norm-squared"], [1], Box([0], [100]), dyn)


# ------------------------------------------------------------------ files


def test_minimal_scenario_parses():
    sc = parse_scenario(_minimal_1d())
    assert sc.task.T == 4
    assert sc.demos == []
    assert sc.model.theta_dim == 2


def test_demo_breaking_dynamics_names_timestep():
    d = _minimal_1d()
    d["demos"] = [[[[0.0], [1.0], [2.1], [3.1]], [[1.0], [1.0], [1.0]]]]
    with pytest.raises(ScenarioError) as err:
        parse_scenario(d)
    assert err.value.field == "demos[0].states[2]"
    assert "timestep 1" in str(err.value)


@pytest.mark.parametrize("path, value, field", [
    (("dynamics", "kind"), "unicycle", "dynamics.kind"),
    (("dynamics", "dt"), -1.0, "dynamics.dt"),
    (("task", "cost"), "time", "task.cost"),
    (("model", "phi"), "polytope", "model.phi"),
    (("version",), 7, "version"),
])
def test_validation_errors_name_the_field(path, value, field):
    d = _minimal_1d()
    target = d
    for key in path[:-1]:
        target = target[key]
    target[path[-1]] = value
    with pytest.raises(ScenarioError) as err:
        parse_scenario(d)
    assert err.value.field.startswith(field)


def test_unknown_fields_rejected():
    d = _minimal_1d()
    d["task"]["colour"] = "red"
    with pytest.raises(ScenarioError) as err:
        parse_scenario(d)
    assert "colour" in str(err.value)


def test_malformed_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ScenarioError):
        read_scenario(p)


def test_toy_round_trip_is_bit_identical(tmp_path):
    sc = shipped("toy_t1")
    assert len(sc.demos) == 1
    out = tmp_path / "toy.json"
    save_scenario(out, sc.task, sc.model, sc.demos, sc.name, sc.query)
    again = read_scenario(out)
    assert np.array_equal(again.demos[0].states, sc.demos[0].states)
    assert np.array_equal(again.demos[0].controls, sc.demos[0].controls)
    assert again.model.theta_prior == sc.model.theta_prior
    first = json.dumps(scenario_to_dict(sc.task, sc.model, sc.demos, sc.name, sc.query), sort_keys=True)
    second = json.dumps(scenario_to_dict(again.task, again.model, again.demos, again.name, again.query), sort_keys=True)
    assert first == second


@pytest.mark.parametrize("name", EXAMPLES)
def test_shipped_scenarios_load(name):
    sc = read_scenario(example_path(name))
    for d in sc.demos:
        check_trajectory(d, sc.task.dynamics)


# ------------------------------------------------------------------ constraint values


def test_g_value_examples():
    model = one_box_model(Box([0.0, 0.0, 0.5, 0.5], [0.5, 0.5, 1.0, 1.0]))
    theta = [0.3, 0.3, 0.6, 0.6]
    assert g_value(model, theta, [0.45, 0.45]) == pytest.approx(0.15)
    assert g_value(model, theta, [0.6, 0.45]) == pytest.approx(0.0, abs=1e-15)
    assert g_value(_scalar_model(), [97.85], [99.0]) == pytest.approx(1.15)


def test_g_value_dimension_mismatch():
    with pytest.raises(ValueError):
        g_value(_scalar_model(), [1.0, 2.0], [3.0])


def test_unsafe_region_examples():
    model = one_box_model(Box([0.0, 0.0, 0.5, 0.5], [0.5, 0.5, 1.0, 1.0]))
    point = unsafe_region(model, Box([0.3, 0.3, 0.6, 0.6], [0.3, 0.3, 0.6, 0.6]))
    assert list(point.boxes) == [Box([0.3, 0.3], [0.6, 0.6])]
    wide = unsafe_region(model, Box([0.3, 0.3, 0.6, 0.6], [0.3, 0.3, 0.9, 0.6]))
    assert list(wide.boxes) == [Box([0.3, 0.3], [0.9, 0.6])]
    scalar = unsafe_region(_scalar_model(), Box([97.85], [100.0]))
    assert len(scalar) == 1 and scalar[0].lo[0] == pytest.approx(97.85)


def test_inner_unsafe_region_is_common_part():
    model = one_box_model(Box([0.0, 0.0, 0.5, 0.5], [0.5, 0.5, 1.0, 1.0]))
    inner = inner_unsafe_region(model, Box([0.2, 0.3, 0.6, 0.7], [0.4, 0.3, 0.8, 0.7]))
    assert list(inner.boxes) == [Box([0.4, 0.3], [0.6, 0.7])]


# ------------------------------------------------------------------ dynamics


def test_zero_controls_constant():
    dyn = plane()
    traj = rollout(dyn, [1.0, 2.0], np.zeros((4, 2)))
    assert np.all(traj.states == [1.0, 2.0])


def test_double_integrator_euler():
    dyn = Dynamics("double-integrator", 1, 1.0, Box([-10, -10], [10, 10]), Box([-2], [2]))
    traj = rollout(dyn, [0.0, 0.0], [[1.0], [1.0]])
    assert traj.states[:, 0].tolist() == [0.0, 0.0, 1.0]
    assert traj.states[:, 1].tolist() == [0.0, 1.0, 2.0]


def test_rollout_reports_bound_violation():
    with pytest.raises(ScenarioError) as err:
        rollout(plane(umax=1.0), [0.0, 0.0], [[0.5, 0.5], [1.5, 0.0]])
    assert err.value.field == "controls[1]"


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.floats(-2, 2), st.floats(-2, 2)), min_size=1, max_size=6))
def test_rollout_passes_invariant(us):
    dyn = Dynamics("double-integrator", 2, 0.5, Box([-100] * 4, [100] * 4), Box([-2, -2], [2, 2]))
    traj = rollout(dyn, np.zeros(4), np.array(us))
    check_trajectory(traj, dyn)


def test_trajectory_shape_check():
    with pytest.raises(ValueError):
        Trajectory(np.zeros((3, 2)), np.zeros((3, 2)))


# ------------------------------------------------------------------ properties


def test_g_positive_iff_strict_interior():
    rng = np.random.default_rng(0)
    model = one_box_model(Box([2, 2, 5, 5], [4, 4, 7, 7]))
    for _ in range(1000):
        theta = np.concatenate([rng.uniform(2, 4, 2), rng.uniform(5, 7, 2)])
        # snap a share of the points onto faces so the boundary is exercised
        kappa = rng.uniform(1, 8, 2)
        if rng.random() < 0.2:
            kappa[rng.integers(2)] = theta[rng.integers(4)]
        region = unsafe_region(model, Box(theta, theta))
        assert (g_value(model, theta, kappa) > 1e-9) == bool(union_interior_contains(region, kappa[None, :])[0])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=8, max_size=8), st.lists(st.floats(2, 8), min_size=8, max_size=8))
def test_unsafe_region_monotone(a, pts):
    prior = Box([2, 2, 5, 5], [4, 4, 7, 7])
    model = one_box_model(prior)
    a = np.array(a)
    inner_lo = prior.lo + a[:4] * 0.5
    inner = Box(inner_lo, inner_lo + a[4:] * 0.5)
    small = unsafe_region(model, inner)
    large = unsafe_region(model, prior)
    p = np.array(pts).reshape(4, 2)
    assert np.all(~union_contains(small, p) | union_contains(large, p))


def test_composite_model_blocks_are_independent():
    sc = shipped("mixed_desk")
    model = sc.model
    assert model.theta_dim == 5
    theta = np.array([4.0, 3.0, 6.0, 7.0, 4.0])
    # inside the state box with a small control: unsafe through the state block only
    assert model.g(theta, np.array([[5.0, 5.0, 1.0]]))[0] > 0
    # far from the state box with a large control: unsafe through the control block
    assert model.g(theta, np.array([[1.0, 1.0, 5.0]]))[0] > 0
    assert model.g(theta, np.array([[1.0, 1.0, 1.0]]))[0] <= 0
    assert isinstance(unsafe_region(model, Box(theta, theta)), BoxUnion)
