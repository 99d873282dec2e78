import json
from unittest.mock import patch

import pytest

from ttstar.errors import ToleranceUnachievable
from ttstar.main import run


def read_report(capsys):
    return json.loads(capsys.readouterr().out)


def test_help_exits_cleanly(capsys):
    """--help prints usage and returns 0."""
    assert run(["--help"]) == 0
    assert "surface" in capsys.readouterr().out


def test_scan_classification(capsys):
    """Scan labels each parameter token."""
    assert run(["scan", "--a-list", "1,2.30886,4", "--xmax", "20"]) == 0
    report = read_report(capsys)
    assert report["success"] == True
    assert report["diagnostics"]["classification"] == {
        "1": "singular",
        "2.30886": "smooth",
        "4": "singular",
    }
    assert report["diagnostics"]["resolution"] == 1e-4


def test_modelcase_agreement(capsys):
    """The numeric factorization agrees with the closed form at z ≈ e^{-1}."""
    assert run(["modelcase", "--a", "1", "--z", "0.367879"]) == 0
    report = read_report(capsys)
    diagnostics = report["diagnostics"]
    assert diagnostics["oracle"]["orbit"] == "w"
    assert diagnostics["oracle"]["k"] == pytest.approx(1.0, rel=1e-5)
    assert diagnostics["agreement"]["orbit"] == True
    assert diagnostics["agreement"]["k_rel_error"] < 1e-8


def test_modelcase_on_boundary_is_numerical_failure(capsys):
    """|z| = e^{-a/2} is the orbit boundary."""
    assert run(["modelcase", "--a", "1", "--z", "0.6065306597126334"]) == 2
    report = read_report(capsys)
    assert report["success"] == False
    assert report["error"] in ("orbit_boundary", "off_big_cell")


def test_piii_writes_csv(tmp_path, capsys):
    out = tmp_path / "trace.csv"
    assert run(["piii", "--a", "2.3088626596", "--xmax", "5", "--out", str(out)]) == 0
    report = read_report(capsys)
    assert report["outputs"] == [str(out)]
    assert report["diagnostics"]["status"]["singular"] == False
    assert report["diagnostics"]["painleve_residual"] < 1e-8
    assert report["diagnostics"]["pointwise_residual"] < 1e-6

    lines = out.read_text().splitlines()
    assert lines[0] == "x,v,vp,y"
    rows = [[float(value) for value in line.split(",")] for line in lines[1:]]
    assert all(row[3] > 0 for row in rows)


def test_surface_writes_obj_and_annotations(tmp_path, capsys):
    mesh_path, notes_path = tmp_path / "mesh.obj", tmp_path / "mesh.json"
    assert run([
        "surface", "--a", "2.3088626596", "--rmin", "0.05", "--rmax", "0.3",
        "--nr", "4", "--ntheta", "5", "--out", str(mesh_path), "--annotations", str(notes_path),
    ]) == 0
    report = read_report(capsys)
    assert report["diagnostics"]["vertices"] == 20
    assert report["diagnostics"]["singular_vertices"] == 0
    assert report["diagnostics"]["faces"] == 12

    lines = mesh_path.read_text().splitlines()
    vertices = [line for line in lines if line.startswith("v ")]
    faces = [line for line in lines if line.startswith("f ")]
    assert len(vertices) == 20
    assert len(faces) == 12
    indices = [int(token) for face in faces for token in face.split()[1:]]
    assert min(indices) == 1 and max(indices) == 20

    notes = json.loads(notes_path.read_text())
    assert len(notes["vertices"]) == 20
    assert notes["vertices"]["0"]["orbit"] == "w"


def test_report_file(tmp_path, capsys):
    report_path = tmp_path / "report.json"
    assert run(["--report", str(report_path), "crosscheck", "--a", "2.3088626596", "--r-list", "0.001,0.01"]) == 0
    assert capsys.readouterr().out == ""
    report = json.loads(report_path.read_text())
    assert report["command"] == "crosscheck"
    assert report["diagnostics"]["max_rel_error"] < 1e-4


def test_usage_errors(capsys):
    """Missing options, unknown commands and malformed lists exit with 1."""
    assert run(["scan"]) == 1
    assert run(["bogus"]) == 1
    assert run(["scan", "--a-list", "1,abc"]) == 1
    capsys.readouterr()
    assert run(["surface", "--a", "1", "--rmin", "0.5", "--rmax", "0.1"]) == 1
    assert read_report(capsys)["error"] == "usage_error"


def test_domain_error_exit_code(capsys):
    assert run(["surface", "--a", "-1", "--nr", "2", "--ntheta", "2"]) == 1
    assert read_report(capsys)["error"] == "domain_error"


@patch("ttstar.main.PainleveService.trace")
def test_numerical_failure_exit_code(mock_trace, capsys):
    """Numerical failures exit with 2 and carry the error tag."""
    mock_trace.side_effect = ToleranceUnachievable("Test error")
    assert run(["piii", "--a", "1"]) == 2
    report = read_report(capsys)
    assert report["error"] == "tolerance_unachievable"
    assert report["message"] == "Test error"


@patch("ttstar.main.export_service.write_trace_csv")
def test_unexpected_error_exit_code(mock_write, tmp_path, capsys):
    """Errors outside the numerical hierarchy still produce an error report."""
    mock_write.side_effect = OSError("Read-only file system")
    assert run(["piii", "--a", "1", "--xmax", "2", "--out", str(tmp_path / "trace.csv")]) == 2
    report = read_report(capsys)
    assert report["success"] == False
    assert report["error"] == "internal_error"
    assert report["message"] == "Read-only file system"


@patch("ttstar.main.export_service.write_json")
def test_unwritable_report_falls_back_to_stdout(mock_write, tmp_path, capsys):
    mock_write.side_effect = OSError("Permission denied")
    assert run(["--report", str(tmp_path / "report.json"), "piii", "--a", "1", "--xmax", "2"]) == 2
    report = read_report(capsys)
    assert report["command"] == "piii"
    assert report["error"] == "internal_error"
