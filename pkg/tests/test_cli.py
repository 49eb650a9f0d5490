"""Command-line interface: commands, outputs, exit codes."""
import json

import numpy as np
import pytest

from conceptforge import asset_io
from conceptforge.cli import main
from conceptforge.correspondence import ConceptPart, Conceptualization
from conceptforge.geometry import sample_surface
from conceptforge.templates import builtin_registry, instantiate_concept


@pytest.fixture(scope="module")
def reg():
    return builtin_registry()


def write_cloud(reg, path, template_id="cylinder", n=400):
    mesh = instantiate_concept(reg, reg.default_instance(template_id), 10).merged
    cloud = sample_surface(mesh, n, seed=0)
    asset_io.save_point_cloud(str(path), cloud.points)


class TestTemplatesList:
    def test_lists_all_ids(self, reg, capsys):
        assert main(["templates", "list"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        ids = [ln.split("\t")[0] for ln in lines]
        assert ids == reg.ids()
        kinds = {ln.split("\t")[1] for ln in lines}
        assert kinds == {"geometry", "concept"}


class TestInstantiate:
    def test_writes_mesh(self, tmp_path, capsys):
        out = tmp_path / "cyl.obj"
        code = main(["instantiate", "cylinder", "--param", "radius=0.3",
                     "--resolution", "8", "--out", str(out)])
        assert code == 0
        mesh = asset_io.load_mesh(str(out))
        r = np.hypot(mesh.vertices[:, 0], mesh.vertices[:, 1]).max()
        assert abs(r - 0.3) < 1e-6

    def test_unknown_template_is_data_error(self, tmp_path, capsys):
        assert main(["instantiate", "warp_core",
                     "--out", str(tmp_path / "x.obj")]) == 2

    def test_unknown_param_is_usage_error(self, tmp_path, capsys):
        code = main(["instantiate", "cylinder", "--param", "girth=1",
                     "--out", str(tmp_path / "x.obj")])
        assert code == 1
        assert "radius" in capsys.readouterr().err  # lists known params

    def test_out_of_bounds_value_is_data_error(self, tmp_path, capsys):
        assert main(["instantiate", "cylinder", "--param", "radius=99",
                     "--out", str(tmp_path / "x.obj")]) == 2


class TestFit:
    def test_fit_writes_instance_json(self, reg, tmp_path, capsys):
        target = tmp_path / "target.obj"
        write_cloud(reg, target)
        out = tmp_path / "fit.json"
        code = main(["fit", "--target", str(target), "--template", "cylinder",
                     "--out", str(out), "--max-iters", "5",
                     "--resolution", "8", "--mesh-samples", "128"])
        assert code == 0
        payload = json.loads(out.read_bytes())
        assert payload["template_id"] == "cylinder"
        assert len(payload["continuous"]) == 2
        assert payload["final_loss"] <= payload["initial_loss"]
        assert payload["iterations_used"] <= 5

    def test_missing_target_is_data_error(self, tmp_path, capsys):
        assert main(["fit", "--target", str(tmp_path / "none.obj"),
                     "--template", "cylinder",
                     "--out", str(tmp_path / "o.json")]) == 2

    def test_overflow_is_numeric_error(self, tmp_path, capsys):
        target = tmp_path / "far.obj"
        target.write_text("v 1e160 1e160 1e160\nv 1e160 0 0\n")
        code = main(["fit", "--target", str(target), "--template", "cylinder",
                     "--out", str(tmp_path / "o.json"), "--max-iters", "2",
                     "--resolution", "8", "--mesh-samples", "64"])
        assert code == 3


class TestAnnotate:
    def test_writes_region_and_pose_files(self, reg, tmp_path, capsys):
        c = Conceptualization(
            "m", "Mug",
            parts=(ConceptPart("body", reg.default_instance("mug")),))
        doc = tmp_path / "mug.json"
        asset_io.save_document(str(doc), c)
        pts = tmp_path / "pts.obj"
        mesh = instantiate_concept(reg, c.parts[0].instance, 8).merged
        asset_io.save_point_cloud(str(pts),
                                  sample_surface(mesh, 80, seed=1).points)
        out = tmp_path / "ann"
        code = main(["annotate", "--concept", str(doc), "--points", str(pts),
                     "--knowledge", "semantic,part_obb", "--resolution", "8",
                     "--out", str(out)])
        assert code == 0
        regions = (out / "regions.tsv").read_text().strip().splitlines()
        assert len(regions) == 80
        poses = json.loads((out / "poses.json").read_bytes())
        assert all(p["knowledge_id"] == "part_obb" for p in poses)

    def test_empty_knowledge_is_usage_error(self, tmp_path, capsys):
        assert main(["annotate", "--concept", "x", "--points", "y",
                     "--knowledge", "", "--out", str(tmp_path)]) == 1

    def test_unknown_knowledge_is_data_error(self, reg, tmp_path, capsys):
        c = Conceptualization(
            "m", "Mug",
            parts=(ConceptPart("body", reg.default_instance("mug")),))
        doc = tmp_path / "mug.json"
        asset_io.save_document(str(doc), c)
        pts = tmp_path / "pts.obj"
        asset_io.save_point_cloud(str(pts), np.zeros((3, 3)))
        assert main(["annotate", "--concept", str(doc), "--points", str(pts),
                     "--knowledge", "telepathy",
                     "--out", str(tmp_path / "ann")]) == 2


class TestStats:
    def test_table_output(self, reg, tmp_path, capsys):
        c = Conceptualization(
            "m", "Mug",
            parts=(ConceptPart("body", reg.default_instance("mug")),))
        asset_io.save_document(str(tmp_path / "m.json"), c)
        assert main(["stats", str(tmp_path)]) == 0
        out = capsys.readouterr().out
        assert out.splitlines()[0].split()[0] == "Cat"
        assert out.splitlines()[-1].split()[0] == "TTL"

    def test_machine_output(self, reg, tmp_path, capsys):
        c = Conceptualization(
            "m", "Mug",
            parts=(ConceptPart("body", reg.default_instance("mug")),))
        asset_io.save_document(str(tmp_path / "m.json"), c)
        assert main(["stats", str(tmp_path), "--format", "machine"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["total"]["N"] == 1

    def test_missing_directory_is_data_error(self, tmp_path, capsys):
        assert main(["stats", str(tmp_path / "nope")]) == 2


class TestExitCodes:
    def test_no_command_is_usage_error(self, capsys):
        assert main([]) in (0, 1)  # click prints help for a bare group
        assert main(["no-such-command"]) == 1
