import json

import pytest

from schrodn import cli, verification
from schrodn.errors import SolverStepError

SMALL = ["grid.n_r=8", "grid.n_theta=16", "basis.K=2", "basis.M=4", "inversion.n_boundary=8",
         "inversion.n_direction=8"]


@pytest.fixture
def out(tmp_path, monkeypatch):
    monkeypatch.setenv("SCHRODN_OUTPUT_DIR", str(tmp_path))
    return tmp_path


@pytest.mark.parametrize("sub,files", [
    ("forward", ["final.csv", "neumann_trace.csv", "summary.json"]),
    ("dnmap", ["system1.dnm", "system2.dnm", "summary.json"]),
    ("xray", ["xray_oneform.csv", "sinogram_function.svg", "summary.json"]),
    ("decompose", ["solenoidal.csv", "potential.csv", "summary.json"]),
])
def test_subcommands_write_artifacts(out, sub, files):
    assert cli.main([sub, "fields.A1.preset=swirl", *SMALL]) == 0
    for f in files:
        assert (out / sub / f).exists()
    summary = json.loads((out / sub / "summary.json").read_text())
    assert len(summary["fingerprint"]) == 64


def test_fingerprint_in_text_headers(out):
    cli.main(["decompose", *SMALL])
    fp = json.loads((out / "decompose" / "summary.json").read_text())["fingerprint"]
    assert f"# fingerprint={fp}" in (out / "decompose" / "solenoidal.csv").read_text()


def test_reruns_are_byte_identical(out):
    blobs = []
    for _ in range(2):
        assert cli.main(["xray", "fields.A1.preset=rotation_bump", *SMALL]) == 0
        blobs.append((out / "xray" / "xray_oneform.csv").read_bytes())
    assert blobs[0] == blobs[1]


def test_config_error_exit_2(out, capsys):
    assert cli.main(["forward", "grid.n_r=-4"]) == 2
    assert "grid.n_r" in capsys.readouterr().err


def test_missing_config_file_exit_2(out, tmp_path):
    assert cli.main(["forward", str(tmp_path / "missing.yaml")]) == 2


def test_runtime_error_exit_1(out, monkeypatch):
    def boom(cfg, path):
        raise SolverStepError("breakdown", step=3)
    monkeypatch.setitem(cli.COMMANDS, "forward", boom)
    assert cli.main(["forward"]) == 1


def test_verify_failure_exit_3(out, monkeypatch):
    monkeypatch.setattr(verification, "run_checks",
                        lambda cfg=None: [verification.Check("x", 1.0, 0.0, False)])
    assert cli.main(["verify"]) == 3
    report = json.loads((out / "verify" / "verify.json").read_text())
    assert report["passed"] is False


def test_bad_subcommand():
    with pytest.raises(SystemExit):
        cli.main(["nope"])
