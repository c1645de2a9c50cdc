import csv
import hashlib
import json
import shutil
from pathlib import Path

import pytest

from artifact.cli import main, manifest_path
from artifact.geometry import Box, BoxUnion
from artifact.sampled_planners import random_roadmap, write_roadmap
from artifact.scenario import example_path

GOLDEN = Path(__file__).parent / "golden"
TOY = str(example_path("toy_t1"))
SEQ = str(example_path("sequential"))


def _sha(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def toy_plan(tmp_path_factory):
    d = tmp_path_factory.mktemp("plan")
    out = d / "plan.json"
    assert _run("plan", "--scenario", TOY, "--variant", "cc", "--eps", "0.1", "--out", out) == 0
    return out


# ------------------------------------------------------------------ exit codes


def test_unknown_flag_is_invalid(tmp_path):
    assert _run("extract", "--scenario", TOY, "--out", tmp_path / "a.json", "--frobnicate") == 2


def test_missing_scenario_is_invalid(tmp_path):
    assert _run("extract", "--scenario", tmp_path / "nope.json", "--out", tmp_path / "a.json") == 2


def test_malformed_scenario_is_invalid(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"dynamics": 3}')
    assert _run("extract", "--scenario", bad, "--out", tmp_path / "a.json") == 2


def test_bad_theta_is_invalid(tmp_path):
    assert _run("simulate", "--scenario", SEQ, "--theta", "1,x", "--out", tmp_path / "t.csv") == 2
    assert _run("simulate", "--scenario", SEQ, "--theta", "1,2", "--out", tmp_path / "t.csv") == 2


def test_roadmap_needs_sampled_variant(tmp_path):
    rm = tmp_path / "rm.json"
    write_roadmap(rm, random_roadmap(6, Box([0, 0], [10, 10]), 0))
    assert _run("plan", "--scenario", TOY, "--variant", "cc", "--roadmap", rm, "--out", tmp_path / "p.json") == 2


def test_infeasible_safe_plan_exit_code(tmp_path):
    out = tmp_path / "p.json"
    assert _run("plan", "--scenario", example_path("walled_off"), "--variant", "safe", "--out", out) == 3
    assert not out.exists()


# ------------------------------------------------------------------ outputs


def test_extract_writes_box_union(tmp_path):
    out = tmp_path / "f.json"
    assert _run("extract", "--scenario", TOY, "--out", out, "--gsets", tmp_path / "g.json") == 0
    doc = json.loads(out.read_text())
    u = BoxUnion.from_list(doc["boxes"], dim=doc["dim"])
    assert not u.is_empty() and u.dim == 4
    rows = list(csv.reader((tmp_path / "f.csv").open()))
    assert rows[0] == ["lo0", "lo1", "lo2", "lo3", "hi0", "hi1", "hi2", "hi3", "volume"]
    assert len(rows) == len(u) + 1
    assert set(json.loads((tmp_path / "g.json").read_text())) == {"g_safe", "g_unsafe", "possibly_unsafe"}


def test_plan_writes_endpoints(toy_plan):
    doc = json.loads(toy_plan.read_text())
    assert doc["states"][0] == [0.0, 5.0] and doc["states"][-1] == [10.0, 5.0]
    assert toy_plan.with_name("plan.csv").read_text().startswith("t,x0,x1,u0,u1\n")


@pytest.mark.parametrize("variant", ["mcr", "btp"])
def test_plan_on_roadmap(tmp_path, variant):
    rm = tmp_path / "rm.json"
    road = random_roadmap(10, Box([0, 0], [10, 10]), 3)
    write_roadmap(rm, road)
    out = tmp_path / "p.json"
    assert _run("plan", "--scenario", TOY, "--variant", variant, "--roadmap", rm, "--samples", 8, "--out", out) == 0
    doc = json.loads(out.read_text())
    assert doc["path"][0] == road.start and doc["path"][-1] == road.goal
    assert doc["cost"] == pytest.approx(road.path_cost(doc["path"]))


def test_simulate_multiple_trials(tmp_path):
    out = tmp_path / "trace.csv"
    assert _run("simulate", "--scenario", SEQ, "--trials", 3, "--trial", 4, "--out", out) == 0
    summary = json.loads((tmp_path / "trace.json").read_text())
    assert [e["trial"] for e in summary["episodes"]] == [4, 5, 6]
    assert (tmp_path / "trace_trial5.csv").exists() and (tmp_path / "trace_trial6.csv").exists()
    assert out.read_text().startswith("step,x0,x1,u0,u1,event,violation_flag\n")


def test_benchmark_writes_metrics_and_histogram(tmp_path):
    out = tmp_path / "m.csv"
    assert _run("benchmark", "--scenario", SEQ, "--policies", "epsmin,optimistic", "--trials", 20, "--out", out) == 0
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["policy", "mean_viol", "std_viol", "mean_cost", "success_rate"]
    assert [r[0] for r in rows[1:]] == ["epsmin", "optimistic"]
    hist = list(csv.reader((tmp_path / "m_hist.csv").open()))
    assert hist[0] == ["count", "empirical_freq", "theoretical_freq"]
    assert sum(float(r[1]) for r in hist[1:]) == pytest.approx(1.0, abs=1e-5)


# ------------------------------------------------------------------ plots


def test_toy_plot_matches_golden(tmp_path, toy_plan):
    out = tmp_path / "toy.svg"
    assert _run("plot", "--scenario", TOY, "--plan", toy_plan, "--out", out) == 0
    assert out.read_text() == (GOLDEN / "toy_cc_plan.svg").read_text()


def test_one_path_element_per_plan(tmp_path, toy_plan):
    other = tmp_path / "opt.json"
    assert _run("plan", "--scenario", TOY, "--variant", "optimistic", "--out", other) == 0
    out = tmp_path / "two.svg"
    assert _run("plot", "--scenario", TOY, "--plan", toy_plan, "--plan", other, "--out", out) == 0
    assert out.read_text().count("<path ") == 2


def test_empty_trace_gives_axes_only(tmp_path):
    trace = tmp_path / "empty.csv"
    trace.write_text("step,x0,x1,u0,u1,event,violation_flag\n")
    out = tmp_path / "e.svg"
    assert _run("plot", "--trace", trace, "--out", out) == 0
    svg = out.read_text()
    assert 'class="frame"' in svg
    assert "<path" not in svg and "<polyline" not in svg


# ------------------------------------------------------------------ manifest replay


def _commands(d):
    rm = d / "rm.json"
    write_roadmap(rm, random_roadmap(8, Box([0, 0], [10, 10]), 1))
    return {
        "extract": ["extract", "--scenario", TOY, "--out", d / "f.json", "--gsets", d / "g.json"],
        "plan": ["plan", "--scenario", TOY, "--variant", "ratio", "--contingencies", "--out", d / "p.json"],
        "roadmap": ["plan", "--scenario", TOY, "--variant", "mcr", "--roadmap", rm, "--out", d / "r.json"],
        "simulate": ["simulate", "--scenario", SEQ, "--trials", 2, "--sensor", "ambiguous-contact",
                     "--sensor", "lidar", "--contact-points", 40, "--seed", 7, "--out", d / "s.csv"],
        "benchmark": ["benchmark", "--scenario", SEQ, "--trials", 15, "--out", d / "b.csv"],
        "plot": ["plot", "--scenario", TOY, "--out", d / "v.svg"],
    }


@pytest.mark.parametrize("name", ["extract", "plan", "roadmap", "simulate", "benchmark", "plot"])
def test_manifest_replay_is_byte_identical(tmp_path, name):
    argv = _commands(tmp_path)[name]
    out = Path(argv[argv.index("--out") + 1])
    assert _run(*argv) == 0
    man_file = manifest_path(out)
    man = json.loads(man_file.read_text())
    assert man["command"] == argv[0] and man["argv"] == [str(a) for a in argv]
    first = {o["path"]: Path(o["path"]).read_bytes() for o in man["outputs"]}
    for p in first:
        Path(p).unlink()
    saved = tmp_path / "saved.manifest.json"
    shutil.copy(man_file, saved)
    assert main(["replay", str(saved), "--check"]) == 0
    for p, data in first.items():
        assert Path(p).read_bytes() == data
        assert _sha(p) == next(o["sha256"] for o in man["outputs"] if o["path"] == p)


def test_replay_detects_tampering(tmp_path):
    argv = _commands(tmp_path)["plot"]
    assert _run(*argv) == 0
    man_file = manifest_path(tmp_path / "v.svg")
    man = json.loads(man_file.read_text())
    man["outputs"][0]["sha256"] = "0" * 64
    bad = tmp_path / "bad.manifest.json"
    bad.write_text(json.dumps(man))
    assert main(["replay", str(bad), "--check"]) == 1
