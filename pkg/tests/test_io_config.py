import numpy as np
import pytest
import yaml

from schrodn import io
from schrodn.calculus import CovectorField, PolarGrid, ScalarField
from schrodn.config import DEFAULTS, ExperimentConfig, apply_overrides, dump_defaults, load_config
from schrodn.errors import ConfigError
from schrodn.geometry import sample_inflow_bundle
from schrodn.raytransform import xray_function
from schrodn.schrodinger import SpaceTimeBasis, dn_magnetic


def test_field_roundtrip(tmp_path, bent):
    g = PolarGrid(6, 12, bent)
    A = CovectorField.from_function(g, lambda p: np.stack([p[..., 0] + 1j, np.sin(p[..., 1])], -1))
    io.write_field(tmp_path / "a.csv", A, "abc")
    B = io.read_field(tmp_path / "a.csv", bent)
    assert isinstance(B, CovectorField)
    assert np.array_equal(A.components, B.components)
    u = ScalarField.from_function(g, lambda p: p[..., 1] ** 3)
    io.write_field(tmp_path / "u.csv", u)
    assert np.array_equal(io.read_field(tmp_path / "u.csv", bent).values, u.values)
    assert "# fingerprint=abc" in (tmp_path / "a.csv").read_text()


def test_raydata_roundtrip(tmp_path, flat):
    rays = sample_inflow_bundle(flat, 6, 5)
    d = xray_function(lambda p: np.exp(p[..., 0]), rays, flat)
    io.write_raydata(tmp_path / "d.csv", d, flat.name)
    e = io.read_raydata(tmp_path / "d.csv", flat)
    assert np.array_equal(d.values, e.values)


def test_dn_roundtrip(tmp_path, flat):
    g = PolarGrid(6, 16, flat)
    D = dn_magnetic(CovectorField.zeros(g), ScalarField.zeros(g), SpaceTimeBasis(2, 4, 3.5))
    io.write_dn_matrix(tmp_path / "a.dnm", D, "fp")
    E, fp = io.read_dn_matrix(tmp_path / "a.dnm")
    assert fp == "fp"
    assert np.array_equal(D.matrix, E.matrix)
    assert io.dn_file_difference(tmp_path / "a.dnm", tmp_path / "a.dnm") == 0
    (tmp_path / "bad.dnm").write_bytes(b"XXXX")
    with pytest.raises(ValueError):
        io.read_dn_matrix(tmp_path / "bad.dnm")


def test_svg_outputs(tmp_path):
    io.loglog_svg(tmp_path / "a.svg", [1e-3, 1e-2, 1e-1], [2e-3, 1e-2, 9e-2], "t", "x", "y", 0.9, "f")
    io.heatmap_svg(tmp_path / "b.svg", np.arange(12.0).reshape(3, 4), "t")
    for name in ("a.svg", "b.svg"):
        text = (tmp_path / name).read_text()
        assert text.startswith("<?xml") and text.rstrip().endswith("</svg>")


def test_defaults_validate():
    cfg = load_config()
    assert cfg["grid"]["n_r"] == DEFAULTS["grid"]["n_r"]
    assert len(cfg.fingerprint) == 64
    assert yaml.safe_load(dump_defaults()) == DEFAULTS


def test_overrides_and_fingerprint():
    a = load_config(None, ["grid.n_r=20"])
    b = load_config(None, [])
    assert a["grid"]["n_r"] == 20
    assert a.fingerprint != b.fingerprint
    assert apply_overrides({}, ["probe.lam=[8, 16]"])["probe"]["lam"] == [8, 16]
    with pytest.raises(ConfigError):
        apply_overrides({}, ["nokey=1"])


@pytest.mark.parametrize("override,path", [
    ("grid.n_r=-3", "grid.n_r"),
    ("grid.n_theta=7", "grid.n_theta"),
    ("basis.K=40", "basis.K"),
    ("grid.T=2.0", "grid.T"),
    ("fields.X1.preset=nope", "fields.X1"),
    ("probe.lam=[1000]", "probe.lam"),
    ("stability.direction=constant", "stability.direction"),
    ("stability.direction.preset=constant", "stability.direction"),
])
def test_validation_names_the_field(override, path):
    with pytest.raises(ConfigError) as exc:
        load_config(None, [override])
    assert exc.value.path.startswith(path)


def test_yaml_file(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text('grid:\n  n_r: 16\nmetric:\n  preset: "conformal:radial"\n')
    cfg = load_config(p)
    assert cfg["grid"]["n_r"] == 16
    assert isinstance(cfg, ExperimentConfig)
    p.write_text("grid: [1, 2\n")
    with pytest.raises(ConfigError):
        load_config(p)
