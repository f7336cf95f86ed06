import json

import numpy as np
import pytest

from hypergeo import data, formats, ghdm
from hypergeo.errors import FormatError, InvalidInputError, ShapeError


@pytest.fixture
def dataset():
    return data.generate_tree_dataset(data.DatasetConfig(depth=2, branching=3, dim=6, per_class=4, seed=2))


class TestDataset:
    def test_round_trip_is_exact(self, dataset, tmp_path):
        path = tmp_path / "d.json"
        formats.write_dataset(dataset, path)
        back = formats.read_dataset(path)
        np.testing.assert_array_equal(back.points, dataset.points)
        np.testing.assert_array_equal(back.labels, dataset.labels)
        np.testing.assert_array_equal(back.tree, dataset.tree)
        np.testing.assert_array_equal(back.class_nodes, dataset.class_nodes)
        assert back.config == dataset.config

    def test_rewrite_is_byte_identical(self, dataset, tmp_path):
        formats.write_dataset(dataset, tmp_path / "a.json")
        formats.write_dataset(formats.read_dataset(tmp_path / "a.json"), tmp_path / "b.json")
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_validation(self, dataset, tmp_path):
        path = tmp_path / "d.json"
        formats.write_dataset(dataset, path)
        obj = json.loads(path.read_text())
        for mutate in (lambda o: o.pop("points"), lambda o: o.update(labels=o["labels"][:-1]),
                       lambda o: o.update(kappa=-1.0), lambda o: o.update(dim=99)):
            bad = json.loads(json.dumps(obj))
            mutate(bad)
            path.write_text(json.dumps(bad))
            with pytest.raises((FormatError, ShapeError, InvalidInputError)):
                formats.read_dataset(path)

    def test_missing_and_malformed(self, tmp_path):
        with pytest.raises(FormatError):
            formats.read_dataset(tmp_path / "missing.json")
        (tmp_path / "bad.json").write_text("{not json")
        with pytest.raises(FormatError):
            formats.read_dataset(tmp_path / "bad.json")


class TestCheckpoint:
    def test_round_trip_is_exact(self, tmp_path):
        cfg = ghdm.GHDMConfig(dim=6, rank=2, init_scale=0.5)
        params = ghdm.GeneratorParams.init(cfg, 1)
        formats.write_checkpoint(params, tmp_path / "c.json", {"lr": 0.1})
        back, train_cfg = formats.read_checkpoint(tmp_path / "c.json")
        assert back.config == cfg and train_cfg == {"lr": 0.1}
        for k, v in params.arrays().items():
            np.testing.assert_array_equal(back.arrays()[k], v)

    @pytest.mark.parametrize("mutate", [
        lambda o: o.update(format_version=99),
        lambda o: o["params"].pop("f_1.w"),
        lambda o: o["params"]["f_1.w"].update(shape=[3, 3]),
        lambda o: o["params"]["f_1.b"].update(data=[0.0]),
    ], ids=["version", "missing", "shape", "size"])
    def test_rejects(self, tmp_path, mutate):
        params = ghdm.GeneratorParams.init(ghdm.GHDMConfig(dim=4, rank=2), 0)
        path = tmp_path / "c.json"
        formats.write_checkpoint(params, path)
        obj = json.loads(path.read_text())
        mutate(obj)
        path.write_text(json.dumps(obj))
        with pytest.raises(FormatError):
            formats.read_checkpoint(path)

    def test_compatibility(self, dataset):
        ok = ghdm.GeneratorParams.init(ghdm.GHDMConfig(dim=6, rank=2, base_kappa=dataset.kappa), 0)
        formats.check_compatible(ok, dataset)
        for cfg in (ghdm.GHDMConfig(dim=5, rank=2, base_kappa=dataset.kappa),
                    ghdm.GHDMConfig(dim=6, rank=2, base_kappa=1.0)):
            with pytest.raises(FormatError):
                formats.check_compatible(ghdm.GeneratorParams.init(cfg, 0), dataset)


class TestCsv:
    def test_round_trip_and_line_endings(self, tmp_path):
        path = tmp_path / "m.csv"
        formats.write_csv(path, ("a", "b"), [(1, 0.1), ("x,y", 2.5e-17)])
        raw = path.read_bytes()
        assert raw.startswith(b"a,b\r\n") and raw.endswith(b"\r\n")
        header, rows = formats.read_csv(path)
        assert header == ["a", "b"]
        assert rows == [["1", "0.1"], ["x,y", "2.5e-17"]]
        assert float(rows[1][1]) == 2.5e-17

    def test_cell(self):
        assert formats.cell(0.1) == "0.1"
        assert formats.cell(np.float64(1 / 3)) == repr(1 / 3)
        assert formats.cell(3) == 3


class TestManifest:
    def test_written_next_to_output(self, tmp_path):
        m = formats.RunManifest("train", {"lr": 0.1}, 3, {"train": 1.5})
        path = formats.write_manifest(m, tmp_path / "out.csv")
        assert path == formats.manifest_path(tmp_path / "out.csv")
        obj = json.loads(path.read_text())
        assert obj["command"] == "train" and obj["seed"] == 3
        assert obj["timings"] == {"train": 1.5}
        assert "numpy" in obj and "python" in obj
