import json

import numpy as np
import pytest

from nonstat_quad.cli import main
from nonstat_quad.grid import make_grid
from nonstat_quad.io import (
    density_from_dict,
    kernel_from_dict,
    model_from_dict,
    read_csv,
    read_field,
    write_csv,
    write_field,
)

MODEL = {
    "grid": {"d": 1, "L": 10.0, "n": 128},
    "C": {"kind": "matern", "nu": 2.0, "rho": 0.5, "sigma2": 1.0},
    "eta": {"kind": "transport", "target": {"kind": "matern", "nu": 2.2, "rho": 0.45, "sigma2": 1.0}, "t0": 1.5},
    "xi": "gradient",
    "prior": {"kind": "matern", "nu": 3.0, "rho": 2.0, "sigma2": 0.1},
    "noise": {"kind": "constant", "value": 0.01},
    "mask_fraction": 0.1,
}


def _config(tmp_path, name="cfg.json", **extra):
    path = tmp_path / name
    path.write_text(json.dumps({"model": MODEL, **extra}))
    return str(path)


class TestFieldIO:
    @pytest.mark.parametrize("d,n", [(1, 32), (2, 8)])
    def test_roundtrip(self, tmp_path, rng, d, n):
        g = make_grid(d, 3.5, n)
        vals = rng.standard_normal(g.shape)
        write_field(tmp_path / "f.bin", vals, g, domain="pixel")
        back, g2, dom = read_field(tmp_path / "f.bin")
        assert g2 == g and dom == "pixel"
        assert back.tobytes() == vals.tobytes()

    def test_rejects_complex_and_wrong_shape(self, tmp_path):
        g = make_grid(1, 1.0, 8)
        with pytest.raises(ValueError):
            write_field(tmp_path / "f.bin", np.ones(8, complex), g)
        with pytest.raises(ValueError):
            write_field(tmp_path / "f.bin", np.ones(9), g)

    def test_truncated_file(self, tmp_path):
        g = make_grid(1, 1.0, 8)
        write_field(tmp_path / "f.bin", np.ones(8), g)
        data = (tmp_path / "f.bin").read_bytes()
        (tmp_path / "f.bin").write_bytes(data[:-8])
        with pytest.raises(ValueError):
            read_field(tmp_path / "f.bin")


class TestCSV:
    def test_roundtrip_twelve_digits(self, tmp_path, rng):
        cols = {"a": rng.standard_normal(20), "b": np.arange(20), "flag": np.arange(20) % 2 == 0}
        write_csv(tmp_path / "t.csv", cols)
        back = read_csv(tmp_path / "t.csv")
        np.testing.assert_allclose(back["a"], cols["a"], rtol=1e-11)
        np.testing.assert_array_equal(back["b"], cols["b"])
        np.testing.assert_array_equal(back["flag"], cols["flag"])

    def test_unequal_lengths(self, tmp_path):
        with pytest.raises(ValueError):
            write_csv(tmp_path / "t.csv", {"a": [1, 2], "b": [1]})


class TestModelDict:
    def test_unknown_density(self):
        with pytest.raises(ValueError):
            density_from_dict({"kind": "gaussian"}, 1)

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            kernel_from_dict({**MODEL, "variant": "other"})

    def test_mask_applied(self):
        K = kernel_from_dict(MODEL)
        assert K.mask.sum() == 13

    def test_defaults(self):
        m = model_from_dict({"grid": MODEL["grid"], "C": MODEL["C"]})
        assert not np.any(m.eta_lat)
        assert not np.any(m.Cphiphi)


class TestCLI:
    @pytest.mark.parametrize("cmd", ["simulate", "var", "bias", "transport", "cutlocus"])
    def test_commands_succeed(self, tmp_path, cmd):
        out = tmp_path / "out"
        assert main([cmd, "--config", _config(tmp_path), "--out", str(out), "--seed", "3"]) == 0
        assert any(out.iterdir())

    def test_simulate_then_estimate(self, tmp_path):
        out = tmp_path / "sim"
        assert main(["simulate", "--config", _config(tmp_path), "--out", str(out), "--seed", "1"]) == 0
        cfg = _config(tmp_path, "est.json", input=str(out / "zobs.bin"))
        assert main(["estimate", "--config", cfg, "--out", str(tmp_path / "est")]) == 0
        tab = read_csv(tmp_path / "est" / "phihat.csv")
        assert set(tab) >= {"index", "l", "re", "im", "A", "valid"}
        assert len(tab["re"]) == 128

    def test_simulate_is_seeded(self, tmp_path):
        cfg = _config(tmp_path)
        for name in ("a", "b"):
            main(["simulate", "--config", cfg, "--out", str(tmp_path / name), "--seed", "9"])
        assert (tmp_path / "a" / "zobs.bin").read_bytes() == (tmp_path / "b" / "zobs.bin").read_bytes()

    def test_bias_both(self, tmp_path):
        out = tmp_path / "out"
        assert main(["bias", "--config", _config(tmp_path, bias="both"), "--out", str(out)]) == 0
        tab = read_csv(out / "bias.csv")
        assert np.all(np.isfinite(tab["Cbias_exact"]))

    def test_missing_config(self, tmp_path):
        assert main(["var", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == 1

    def test_bad_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        assert main(["var", "--config", str(p), "--out", str(tmp_path)]) == 1

    def test_missing_model(self, tmp_path):
        p = tmp_path / "empty.json"
        p.write_text("{}")
        assert main(["var", "--config", str(p), "--out", str(tmp_path)]) == 1

    def test_bad_bias_kind(self, tmp_path):
        assert main(["bias", "--config", _config(tmp_path, bias="slow"), "--out", str(tmp_path)]) == 1

    def test_cost_cap_exit_code(self, tmp_path):
        big = {**MODEL, "grid": {"d": 1, "L": 10.0, "n": 2**13 + 2}}
        p = tmp_path / "big.json"
        p.write_text(json.dumps({"model": big, "bias": "exact"}))
        assert main(["bias", "--config", str(p), "--out", str(tmp_path)]) == 2

    def test_estimate_grid_mismatch(self, tmp_path):
        g = make_grid(1, 10.0, 64)
        write_field(tmp_path / "z.bin", np.zeros(64), g)
        cfg = _config(tmp_path, input=str(tmp_path / "z.bin"))
        assert main(["estimate", "--config", cfg, "--out", str(tmp_path)]) == 1
