import math
import time

import networkx as nx
import numpy as np
import pytest

from artifact.belief import Belief, prob_points_safe
from artifact.geometry import Box, BoxUnion, union_interior_contains
from artifact.sampled_planners import (
    DisconnectedRoadmap,
    EdgeBeliefs,
    Roadmap,
    btp_plan,
    default_spacing,
    estimate_edge_safety,
    mcr_plan,
    path_weight,
    random_roadmap,
    read_roadmap,
    write_roadmap,
)
from artifact.scenario import unsafe_region

from helpers import one_box_model

PRIOR = Box([2, 2, 5, 5], [4, 4, 7, 7])
WORLD = Box([0, 0], [10, 10])


def _thetas(rng, n):
    return rng.uniform(PRIOR.lo, PRIOR.hi, (n, 4))


def _edge_violations(roadmap, thetas, model, spacing):
    """Per edge, the set of samples whose unsafe box holds an edge point in its interior."""
    regions = [unsafe_region(model, Box(th, th)) for th in thetas]
    out = []
    for pts in roadmap.edge_points(spacing):
        out.append({i for i, r in enumerate(regions) if union_interior_contains(r, pts).any()})
    return out


def _graph(roadmap):
    g = nx.Graph()
    g.add_nodes_from(range(roadmap.n_vertices))
    for k, (i, j, c) in enumerate(roadmap.edges):
        g.add_edge(i, j, k=k, weight=c)
    return g


def _simple_paths(roadmap):
    return list(nx.all_simple_paths(_graph(roadmap), roadmap.start, roadmap.goal))


def _edge_ids(roadmap, path):
    g = _graph(roadmap)
    return [g.edges[a, b]["k"] for a, b in zip(path, path[1:])]


# ------------------------------------------------------------------ roadmap type


def test_roadmap_validation_and_round_trip(tmp_path):
    with pytest.raises(ValueError):
        Roadmap([[0, 0], [1, 1]], [(0, 2, 1.0)], 0, 1)
    with pytest.raises(ValueError):
        Roadmap([[0, 0], [1, 1]], [(0, 1, -1.0)], 0, 1)
    rm = random_roadmap(6, WORLD, 0)
    write_roadmap(tmp_path / "r.json", rm)
    again = read_roadmap(tmp_path / "r.json")
    assert again.edges == rm.edges and np.array_equal(again.vertices, rm.vertices)


# ------------------------------------------------------------------ MCR


def test_mcr_zero_samples_is_shortest_path():
    rm = random_roadmap(10, WORLD, 1)
    path, violated = mcr_plan(rm, np.empty((0, 4)), one_box_model(PRIOR))
    assert violated == []
    want = nx.dijkstra_path_length(_graph(rm), rm.start, rm.goal)
    assert rm.path_cost(path) == pytest.approx(want)


def test_mcr_single_blocking_sample():
    # two routes, both crossing the same obstacle
    verts = [[0, 5], [5, 9], [5, 1], [10, 5]]
    rm = Roadmap(verts, [(0, 1, 1.0), (1, 3, 1.0), (0, 2, 1.0), (2, 3, 1.0)], 0, 3)
    model = one_box_model(Box([0, 0, 0, 0], [10, 10, 10, 10]))
    path, violated = mcr_plan(rm, np.array([[3.0, 0.0, 7.0, 10.0]]), model)
    assert violated == [0]
    assert path[0] == 0 and path[-1] == 3


def test_mcr_disconnected():
    rm = Roadmap([[0, 0], [1, 1], [2, 2]], [(0, 1, 1.0)], 0, 2)
    with pytest.raises(DisconnectedRoadmap):
        mcr_plan(rm, np.empty((0, 4)), one_box_model(PRIOR))


@pytest.mark.parametrize("seed", range(8))
def test_mcr_matches_exhaustive_enumeration(seed):
    rng = np.random.default_rng(100 + seed)
    rm = random_roadmap(10, WORLD, rng)
    model = one_box_model(PRIOR)
    thetas = _thetas(rng, 5)
    spacing = default_spacing(thetas, model)
    viol = _edge_violations(rm, thetas, model, spacing)
    best = min(len(set().union(*[viol[k] for k in _edge_ids(rm, p)])) for p in _simple_paths(rm))
    path, violated = mcr_plan(rm, thetas, model, spacing)
    assert len(violated) == best
    assert set(violated) == set().union(*[viol[k] for k in _edge_ids(rm, path)])


@pytest.mark.parametrize("seed", range(4))
def test_mcr_never_worse_on_denser_roadmap(seed):
    rng = np.random.default_rng(200 + seed)
    model = one_box_model(PRIOR)
    thetas = _thetas(rng, 6)
    dense = random_roadmap(12, WORLD, rng, k=4)
    # drop a share of the non-chain edges to get a sparser subgraph
    keep = [e for e in dense.edges if e[1] == e[0] + 1 or rng.random() < 0.5]
    sparse = Roadmap(dense.vertices, keep, dense.start, dense.goal)
    spacing = default_spacing(thetas, model)
    assert len(mcr_plan(dense, thetas, model, spacing)[1]) <= len(mcr_plan(sparse, thetas, model, spacing)[1])


def test_mcr_beam_is_sound():
    rng = np.random.default_rng(9)
    rm = random_roadmap(20, WORLD, rng)
    model = one_box_model(PRIOR)
    thetas = _thetas(rng, 8)
    exact = mcr_plan(rm, thetas, model, exact=True)[1]
    beam_path, beam = mcr_plan(rm, thetas, model, exact=False)
    assert len(beam) >= len(exact)
    assert beam_path[0] == rm.start and beam_path[-1] == rm.goal


# ------------------------------------------------------------------ edge safety


def test_edge_safety_examples():
    model = one_box_model(Box([0, 0, 0, 0], [10, 10, 10, 10]))
    rm = Roadmap([[0, 0], [1, 0], [5, 5], [5.5, 5.5]], [(0, 1, 1.0), (2, 3, 1.0)], 0, 1)
    thetas = np.array([[4.0, 4.0, 6.0, 6.0], [3.0, 3.0, 7.0, 8.0]])
    p = estimate_edge_safety(rm, thetas, model).p_safe
    assert p.tolist() == [1.0, 0.0]
    with pytest.raises(ValueError):
        estimate_edge_safety(rm, np.empty((0, 4)), model)


@pytest.mark.parametrize("seed", range(3))
def test_edge_safety_matches_recount(seed):
    rng = np.random.default_rng(seed)
    rm = random_roadmap(8, WORLD, rng)
    model = one_box_model(PRIOR)
    thetas = _thetas(rng, 40)
    spacing = default_spacing(thetas, model)
    viol = _edge_violations(rm, thetas, model, spacing)
    want = [1.0 - len(v) / len(thetas) for v in viol]
    np.testing.assert_allclose(estimate_edge_safety(rm, thetas, model, spacing).p_safe, want)


def test_edge_safety_converges_to_exact_probability():
    rng = np.random.default_rng(5)
    rm = random_roadmap(8, WORLD, rng)
    model = one_box_model(PRIOR)
    belief = Belief(BoxUnion([PRIOR]))
    n = 10_000
    spacing = 0.05
    p = estimate_edge_safety(rm, _thetas(rng, n), model, spacing).p_safe
    for k, pts in enumerate(rm.edge_points(spacing)):
        exact = prob_points_safe(belief, pts, model)
        assert abs(p[k] - exact) <= 3 * math.sqrt(max(exact * (1 - exact), 1e-12) / n) + 1e-12


# ------------------------------------------------------------------ BTP


def _random_beliefs(rng, rm):
    p = rng.uniform(0.05, 1.0, len(rm.edges))
    p[rng.random(len(p)) < 0.2] = 1.0
    return EdgeBeliefs(p)


def _brute_btp(rm, beliefs, beta):
    best, arg = math.inf, None
    for path in _simple_paths(rm):
        ks = _edge_ids(rm, path)
        w = sum(rm.edges[k][2] - beta * math.log(beliefs.p_safe[k]) for k in ks)
        if w < best - 1e-12:
            best, arg = w, path
    return best, arg


@pytest.mark.parametrize("seed", range(6))
def test_btp_matches_enumeration(seed):
    rng = np.random.default_rng(300 + seed)
    rm = random_roadmap(8, WORLD, rng)
    beliefs = _random_beliefs(rng, rm)
    beta = float(rng.uniform(0, 5))
    best, arg = _brute_btp(rm, beliefs, beta)
    path = btp_plan(rm, beliefs, beta)
    assert path_weight(rm, path, beliefs, beta) == pytest.approx(best)
    assert path == arg


def test_btp_beta_zero_is_shortest_path():
    rng = np.random.default_rng(7)
    for _ in range(5):
        rm = random_roadmap(9, WORLD, rng)
        path = btp_plan(rm, _random_beliefs(rng, rm), 0.0)
        assert rm.path_cost(path) == pytest.approx(nx.dijkstra_path_length(_graph(rm), rm.start, rm.goal))


def test_btp_large_beta_prefers_likely_safe_path():
    verts = [[0, 0], [1, 1], [1, -1], [2, 0]]
    rm = Roadmap(verts, [(0, 1, 1.0), (1, 3, 1.0), (0, 2, 5.0), (2, 3, 5.0)], 0, 3)
    beliefs = EdgeBeliefs([0.5, 0.9, 0.99, 0.99])
    assert btp_plan(rm, beliefs, 0.0) == [0, 1, 3]
    assert btp_plan(rm, beliefs, 1e6) == [0, 2, 3]


def test_btp_excludes_never_safe_edges():
    rm = Roadmap([[0, 0], [1, 0]], [(0, 1, 1.0)], 0, 1)
    with pytest.raises(DisconnectedRoadmap):
        btp_plan(rm, EdgeBeliefs([0.0]), 1.0)
    with pytest.raises(ValueError):
        btp_plan(rm, EdgeBeliefs([0.5]), -1.0)


@pytest.mark.parametrize("seed", range(4))
def test_btp_scaling_invariance(seed):
    rng = np.random.default_rng(400 + seed)
    rm = random_roadmap(9, WORLD, rng)
    beliefs = _random_beliefs(rng, rm)
    beta, s = 1.5, 3.7
    scaled = Roadmap(rm.vertices, [(i, j, s * c) for i, j, c in rm.edges], rm.start, rm.goal)
    assert btp_plan(scaled, beliefs, s * beta) == btp_plan(rm, beliefs, beta)


def test_btp_linear_form():
    verts = [[0, 0], [1, 1], [1, -1], [2, 0]]
    rm = Roadmap(verts, [(0, 1, 1.0), (1, 3, 1.0), (0, 2, 1.5), (2, 3, 1.5)], 0, 3)
    beliefs = EdgeBeliefs([0.5, 1.0, 1.0, 1.0])
    # the detour costs 1 more; at beta 1.7 the linear penalty is 0.85 and the log penalty 1.18
    assert btp_plan(rm, beliefs, 1.7, linear=True) == [0, 1, 3]
    assert btp_plan(rm, beliefs, 1.7) == [0, 2, 3]


def test_mcr_runtime_budget():
    rng = np.random.default_rng(11)
    rm = random_roadmap(12, WORLD, rng, k=4)
    model = one_box_model(PRIOR)
    t0 = time.perf_counter()
    mcr_plan(rm, _thetas(rng, 8), model)
    assert time.perf_counter() - t0 <= 5.0
