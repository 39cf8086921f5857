from __future__ import annotations

import copy
import csv
import filecmp
import json

import pytest
import yaml
from click.testing import CliRunner

from streamway.cli import main
from streamway.errors import MissingArtifact, StageError
from streamway.pipeline import run_pipeline, select_events
from streamway.plotting import emit_plots
from streamway.scenario import load_scenario, validate

FREE = {
    "schema_version": 1,
    "name": "free",
    "region": {"x_min": 0, "x_max": 200, "y_min": 0, "y_max": 100},
    "layers": {"altitudes": [20, 25], "streamlines": {"odd": 4, "even": 6}},
    "events": [{"time": 0, "type": "request", "uas": "u1", "entry": [0, 25, 20], "goal": [200, 25, 20]}],
}


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def demo_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("demo")
    return run_pipeline(load_scenario("demo"), out, plots=("corridors", "paths"))


class TestPipeline:
    def test_free_single_straight_path(self, tmp_path):
        art = run_pipeline(validate(copy.deepcopy(FREE)), tmp_path)
        assert list(art.paths) == ["u1"]
        steps = rows(art.paths["u1"])
        assert {r["action"] for r in steps[:-1]} == {"forward"} and steps[-1]["action"] == "goal"
        assert {r["y"] for r in steps} == {"25.000000"}
        assert steps[-1]["x"] == "200.000000"

    def test_demo_artifacts(self, demo_run):
        art = demo_run
        assert sorted(art.paths) == ["uas1", "uas2", "uas3", "uas4"]
        assert art.audit["separation_ok"] and art.audit["geometry_ok"] and not art.unallocated
        assert sorted(art.corridors) == list(range(1, 9))
        log = rows(art.log)
        for r in log:
            if r["path_file"]:
                assert (art.out_dir / r["path_file"]).exists()
        assert [r["uas_id"] for r in log if r["outcome"] == "allocated"] == ["uas1", "uas2", "uas3", "uas4"]
        meta = json.loads(art.meta.read_text())
        assert meta["plot_scale"] == 0.1 and len(meta["layers"]) == 8
        summary = json.loads(art.summary.read_text())
        assert {"merge", "section", "grid", "solve", "corridors", "plan", "total"} <= set(summary["timings_s"])
        header = rows(art.corridors[1])[0]
        assert list(header) == ["layer", "streamline", "level", "k", "x", "y", "z"]
        assert {p.name for p in art.plots} == {"corridors.svg", "paths.svg"}

    def test_full_span_obstacle_stage(self, tmp_path):
        raw = copy.deepcopy(FREE)
        raw["obstacles"] = [{"name": "wall", "base": 0, "top": 100, "polygon": [[90, -10], [110, -10], [110, 110], [90, 110]]}]
        with pytest.raises(StageError) as exc:
            run_pipeline(validate(raw), tmp_path)
        assert exc.value.stage == "grid"
        assert type(exc.value.cause).__name__ == "ObstacleTouchesBoundary"

    def test_byte_identical_reruns(self, tmp_path):
        doc = load_scenario("demo")
        a = run_pipeline(doc, tmp_path / "a", dump_fields=True)
        b = run_pipeline(doc, tmp_path / "b", dump_fields=True)
        cmp = filecmp.dircmp(a.out_dir, b.out_dir)
        assert cmp.left_only == [] and cmp.right_only == []
        for rel in ["allocation_log.csv", "run_meta.json"] + \
                   [p.relative_to(a.out_dir).as_posix() for p in (*a.paths.values(), *a.corridors.values(),
                                                                   *a.fields.values(), *a.sections.values())]:
            assert (a.out_dir / rel).read_bytes() == (b.out_dir / rel).read_bytes(), rel

    def test_modes(self, tmp_path):
        doc = load_scenario("demo")
        f = run_pipeline(doc, tmp_path / "f", mode="field")
        assert f.fields and not f.corridors and not f.paths
        c = run_pipeline(doc, tmp_path / "c", mode="corridors")
        assert c.corridors and not c.paths and not c.fields
        # the helicopter zone at t=0 is part of the initial airspace
        assert any(r["kind"] == "atm_no_fly" for r in rows(c.sections[1]))
        with pytest.raises(ValueError):
            run_pipeline(doc, tmp_path / "x", mode="bogus")

    def test_plan_ignores_disruptions(self):
        raw = copy.deepcopy(FREE)
        raw["events"] += [{"time": 5, "type": "uas_failure", "uas": "u1"},
                          {"time": 6, "type": "atm_allocation", "zone": "z", "base": 0, "top": 50,
                           "cylinder": {"center": [100, 60], "radius": 10}}]
        doc = validate(raw)
        kinds = [type(e).__name__ for e in select_events(doc, "plan")]
        assert kinds == ["NewRequest"]
        assert len(select_events(doc, "simulate")) == 3


class TestPlots:
    def test_pure_rerender(self, demo_run):
        first = {p.name: p.read_bytes() for p in demo_run.plots}
        for p in demo_run.plots:
            p.unlink()
        again = emit_plots(demo_run.out_dir, ("corridors", "paths"))
        assert {p.name: p.read_bytes() for p in again} == first

    def test_missing(self, tmp_path):
        with pytest.raises(MissingArtifact):
            emit_plots(tmp_path, ("paths",))
        art = run_pipeline(validate(copy.deepcopy(FREE)), tmp_path / "r", mode="corridors")
        with pytest.raises(MissingArtifact):
            emit_plots(art.out_dir, ("field",))
        with pytest.raises(MissingArtifact):
            emit_plots(art.out_dir, ("paths",))
        (art.out_dir / "corridors" / "corridors_L1.csv").unlink()
        with pytest.raises(MissingArtifact):
            emit_plots(art.out_dir, ("corridors",))
        with pytest.raises(ValueError):
            emit_plots(art.out_dir, ("nope",))

    def test_free_field_plot(self, tmp_path):
        raw = copy.deepcopy(FREE)
        raw["layers"]["altitudes"] = [20]
        art = run_pipeline(validate(raw), tmp_path, mode="field", plots=("field",))
        assert [p.name for p in art.plots] == ["field_L1.svg"]
        svg = art.plots[0].read_text()
        assert svg.startswith("<?xml") and "<dc:date>" not in svg


class TestCli:
    def run(self, *args):
        return CliRunner().invoke(main, list(args), catch_exceptions=False)

    def test_validate(self, tmp_path):
        r = self.run("validate", "demo")
        assert r.exit_code == 0
        assert r.stdout.splitlines()[1].split("\t") == ["demo-downtown", "8", "5", "5", "4"]
        bad = tmp_path / "bad.yaml"
        bad.write_text("schema_version: 1\nregion: {x_min: 0}\nlayers: {altitudes: [30, 20]}\n")
        r = self.run("validate", str(bad))
        assert r.exit_code == 2 and "schema:" in r.output
        bad.write_text("region: [\n")
        assert self.run("validate", str(bad)).exit_code == 2
        assert self.run("validate", str(tmp_path / "none.yaml")).exit_code == 2

    def test_simulate_and_plot(self, tmp_path):
        scen = tmp_path / "s.yaml"
        scen.write_text(yaml.safe_dump(FREE))
        out = tmp_path / "out"
        r = self.run("--out-dir", str(out), "simulate", str(scen))
        assert r.exit_code == 0
        assert r.stdout.splitlines()[0].startswith("uas\tstatus")
        assert r.stdout.splitlines()[1].split("\t")[:2] == ["u1", "active"]
        r = self.run("--out-dir", str(out), "plot")
        assert r.exit_code == 0 and (out / "plots" / "paths.svg").exists()
        assert self.run("--out-dir", str(tmp_path / "empty"), "plot").exit_code == 2

    def test_field_and_corridor_commands(self, tmp_path):
        scen = tmp_path / "s.yaml"
        scen.write_text(yaml.safe_dump(FREE))
        r = self.run("--out-dir", str(tmp_path / "f"), "solve-field", str(scen), "--plot")
        assert r.exit_code == 0 and (tmp_path / "f" / "plots" / "field_L2.svg").exists()
        r = self.run("--out-dir", str(tmp_path / "c"), "gen-corridors", str(scen))
        assert r.exit_code == 0
        assert [ln.split("\t")[:4] for ln in r.stdout.splitlines()[1:]] == [["1", "x", "+1", "4"], ["2", "y", "-1", "6"]]

    def test_infeasible_exit(self, tmp_path):
        raw = copy.deepcopy(FREE)
        raw["obstacles"] = [{"name": "wall", "base": 0, "top": 100, "polygon": [[90, -10], [110, -10], [110, 110], [90, 110]]}]
        scen = tmp_path / "s.yaml"
        scen.write_text(yaml.safe_dump(raw))
        r = self.run("--out-dir", str(tmp_path / "o"), "simulate", str(scen))
        assert r.exit_code == 3 and "grid" in r.output

    def test_unallocated_exit(self, tmp_path):
        raw = copy.deepcopy(FREE)
        raw["events"][0]["goal"] = [0, 25, 20]
        raw["events"][0]["entry"] = [200, 25, 20]  # against the flow
        scen = tmp_path / "s.yaml"
        scen.write_text(yaml.safe_dump(raw))
        r = self.run("--out-dir", str(tmp_path / "o"), "plan", str(scen))
        assert r.exit_code == 3 and "queued" in r.output
