"""Round-trips, corruption detection, presets, and observable extraction."""

import numpy as np
import pytest

from finn.dataio import (Dataset, extract_breakthrough, extract_profile, fmt,
                         load_checkpoint, preset, read_config, read_dataset,
                         save_checkpoint, scenario_meta, write_config,
                         write_dataset)
from finn.errors import ConfigError, DataFormatError
from finn.fvm import Cauchy, Dirichlet, Grid1D, Neumann
from finn.nn import ParamStore, mlp_forward, mlp_init


def toy_dataset() -> Dataset:
    rng = np.random.default_rng(11)
    grid = Grid1D(n_volumes=3, dx=0.5)
    meta = scenario_meta(grid=grid, soil=None, bc_left=Dirichlet(1.0),
                         bc_right=Cauchy(flow_rate=2.0), provenance="test")
    return Dataset(t_grid=np.array([0.0, 1.5]), c=rng.normal(size=(2, 3)),
                   ct=rng.normal(size=(2, 3)), meta=meta)


class TestDatasetRoundTrip:
    def test_bitwise_round_trip(self, tmp_path):
        data = toy_dataset()
        write_dataset(tmp_path / "d", data)
        back = read_dataset(tmp_path / "d")
        assert np.array_equal(back.t_grid, data.t_grid)
        assert np.array_equal(back.c, data.c)
        assert np.array_equal(back.ct, data.ct)
        assert back.meta == data.meta

    def test_extreme_values_survive(self, tmp_path):
        data = toy_dataset()
        data.c[0, 0] = 1.2345678901234567e-300
        data.c[0, 1] = -9.876543210987654e250
        data.c[1, 2] = np.nextafter(1.0, 2.0)
        write_dataset(tmp_path / "d", data)
        assert np.array_equal(read_dataset(tmp_path / "d").c, data.c)

    def test_row_count_mismatch_detected(self, tmp_path):
        write_dataset(tmp_path / "d", toy_dataset())
        t_file = tmp_path / "d" / "t.csv"
        t_file.write_text(t_file.read_text() + "3.0\n")
        with pytest.raises(DataFormatError, match="rows"):
            read_dataset(tmp_path / "d")

    def test_non_numeric_cell_reported_with_position(self, tmp_path):
        write_dataset(tmp_path / "d", toy_dataset())
        c_file = tmp_path / "d" / "c.csv"
        lines = c_file.read_text().splitlines()
        cells = lines[1].split(",")
        cells[1] = "oops"
        lines[1] = ",".join(cells)
        c_file.write_text("\n".join(lines) + "\n")
        with pytest.raises(DataFormatError, match=r"c\.csv:2:2"):
            read_dataset(tmp_path / "d")

    def test_ragged_row_detected(self, tmp_path):
        write_dataset(tmp_path / "d", toy_dataset())
        c_file = tmp_path / "d" / "c.csv"
        lines = c_file.read_text().splitlines()
        lines[1] = lines[1] + ",0.5"
        c_file.write_text("\n".join(lines) + "\n")
        with pytest.raises(DataFormatError, match="ragged"):
            read_dataset(tmp_path / "d")

    def test_missing_directory(self, tmp_path):
        with pytest.raises(DataFormatError):
            read_dataset(tmp_path / "nope")


class TestCheckpointRoundTrip:
    def test_bitwise_round_trip(self, tmp_path):
        store = ParamStore()
        store["stencil"] = np.array([-1.03, 0.98])
        store["w"] = np.random.default_rng(0).normal(size=(4, 3))
        store["scalar"] = np.array(0.5413)
        save_checkpoint(tmp_path / "ckpt.bin", store)
        back = load_checkpoint(tmp_path / "ckpt.bin")
        assert back.names() == store.names()
        for k in store.names():
            assert np.array_equal(back[k], store[k])
            assert back[k].shape == store[k].shape

    def test_network_round_trip_preserves_forward(self, tmp_path):
        net = mlp_init([1, 15, 15, 15, 1], seed=0)
        store = ParamStore()
        for i, (w, b) in enumerate(zip(net.weights, net.biases)):
            store[f"w{i}"], store[f"b{i}"] = w, b
        store["raw_scale"] = net.raw_scale
        save_checkpoint(tmp_path / "net.bin", store)
        back = load_checkpoint(tmp_path / "net.bin")
        net2 = mlp_init([1, 15, 15, 15, 1], seed=99)  # same shapes, values replaced
        net2.weights = [back[f"w{i}"] for i in range(4)]
        net2.biases = [back[f"b{i}"] for i in range(4)]
        net2.raw_scale = back["raw_scale"]
        for x in (0.0, 0.5, 1.0):
            assert mlp_forward(net2, x) == mlp_forward(net, x)

    def test_truncation_detected(self, tmp_path):
        store = ParamStore()
        store["a"] = np.arange(10.0)
        save_checkpoint(tmp_path / "c.bin", store)
        blob = (tmp_path / "c.bin").read_bytes()
        (tmp_path / "c.bin").write_bytes(blob[:-8])
        with pytest.raises(DataFormatError, match="truncated"):
            load_checkpoint(tmp_path / "c.bin")

    def test_bad_magic_detected(self, tmp_path):
        (tmp_path / "c.bin").write_bytes(b"NOTACKPT" + b"\x00" * 16)
        with pytest.raises(DataFormatError, match="not a checkpoint"):
            load_checkpoint(tmp_path / "c.bin")

    def test_unknown_version_detected(self, tmp_path):
        store = ParamStore()
        store["a"] = np.zeros(2)
        save_checkpoint(tmp_path / "c.bin", store)
        blob = bytearray((tmp_path / "c.bin").read_bytes())
        blob[8] = 99  # version field
        (tmp_path / "c.bin").write_bytes(bytes(blob))
        with pytest.raises(DataFormatError, match="version"):
            load_checkpoint(tmp_path / "c.bin")

    def test_trailing_bytes_detected(self, tmp_path):
        store = ParamStore()
        store["a"] = np.zeros(2)
        save_checkpoint(tmp_path / "c.bin", store)
        with (tmp_path / "c.bin").open("ab") as fh:
            fh.write(b"junk")
        with pytest.raises(DataFormatError, match="trailing"):
            load_checkpoint(tmp_path / "c.bin")


class TestConfigFiles:
    def test_round_trip_with_comments(self, tmp_path):
        write_config(tmp_path / "a.cfg", {"x.y": 1.5, "name": "run", "flag": True})
        text = (tmp_path / "a.cfg").read_text()
        (tmp_path / "a.cfg").write_text("# header comment\n" + text + "\n# tail\n")
        back = read_config(tmp_path / "a.cfg")
        assert back == {"x.y": "1.5", "name": "run", "flag": "true"}

    def test_malformed_line_reported(self, tmp_path):
        (tmp_path / "bad.cfg").write_text("just some words\n")
        with pytest.raises(DataFormatError, match="bad.cfg:1"):
            read_config(tmp_path / "bad.cfg")


class TestPresets:
    def test_synthetic_train_matches_table(self):
        p = preset("synthetic-train")
        assert p.soil.d_e == 5e-4
        assert p.soil.porosity == 0.29
        assert p.soil.rho_s == 2880.0
        assert p.soil.k_f == 3.53e-4
        assert p.soil.n_f == 0.874
        assert p.grid.length == 1.0
        assert p.grid.dx == 0.04
        assert p.grid.n_volumes == 26
        assert p.t_end == 1e4
        assert p.dt == 5.0
        assert p.c_s == 1.0
        assert p.bc_left == Dirichlet(1.0)
        assert p.bc_right == Cauchy(flow_rate=1.0)
        assert len(p.t_grid()) == 2000

    def test_synthetic_test_differs_only_in_boundary_value(self):
        a, b = preset("synthetic-train"), preset("synthetic-test")
        assert b.c_s == 0.7
        assert b.bc_left == Dirichlet(0.7)
        assert (a.soil, a.grid, a.bc_right, a.t_end, a.dt) == \
               (b.soil, b.grid, b.bc_right, b.t_end, b.dt)

    def test_core_sample_parameters(self):
        c1 = preset("core1")
        assert c1.soil.d_e == 2.00e-5
        assert c1.soil.porosity == 0.288
        assert c1.soil.rho_s == 1957.0
        assert c1.grid.length == 0.0254
        assert c1.radius == 0.02375
        assert c1.t_end == 38.81
        assert c1.flow_rate == 1.01e-4
        assert c1.c_s == 1.4
        assert c1.bc_right == Cauchy(flow_rate=1.01e-4)

        c2 = preset("core2")
        assert c2.c_s == 1.6
        assert c2.t_end == 39.82
        assert c2.grid.length == 0.02604
        assert c2.flow_rate == 1.04e-4

        c2b = preset("core2b")
        assert c2b.soil.d_e == 2.78e-5
        assert c2b.grid.length == 0.105
        assert c2b.t_end == 48.88
        assert c2b.c_s == 1.4
        assert c2b.bc_right == Neumann(0.0)
        assert c2b.radius is None and c2b.flow_rate is None

    def test_unknown_preset_rejected(self):
        with pytest.raises(ConfigError):
            preset("synthetic-validation")


class TestObservables:
    def test_breakthrough_is_last_column(self):
        data = toy_dataset()
        t, btc = extract_breakthrough(data)
        assert np.array_equal(t, data.t_grid)
        assert np.array_equal(btc, data.c[:, -1])

    def test_profile_is_selected_row(self):
        data = toy_dataset()
        assert np.array_equal(extract_profile(data, "c", 0), data.c[0])
        assert np.array_equal(extract_profile(data, "ct", -1), data.ct[-1])

    def test_profile_index_out_of_range(self):
        with pytest.raises(ConfigError):
            extract_profile(toy_dataset(), "c", 5)
        with pytest.raises(ConfigError):
            extract_profile(toy_dataset(), "b", 0)

    def test_fmt_round_trips_floats(self):
        for x in (0.1, 1e-300, -3.53e-4, np.pi):
            assert float(fmt(x)) == x
