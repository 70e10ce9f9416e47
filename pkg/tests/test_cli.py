import json

import pytest

from app import main
from services.phantom_service import load_raw_image


SMALL = [
    "--override", "phantom.side=16",
    "--override", "geometry.n_angles=12",
    "--override", "partition.nodes=2",
    "--override", "admm.eta1=auto",
    "--override", "admm.outer_iters=5",
    "--override", "ctr.iterations=20",
    "--override", "quantizer.kind=kmeans",
]


def _last_json(capsys):
    out = capsys.readouterr().out.strip().splitlines()
    return json.loads(out[-1])


def test_help_and_version_exit_zero(capsys):
    assert main(["--help"]) == 0
    assert "reconstruct-dadmm" in capsys.readouterr().out
    assert main(["--version"]) == 0
    assert "0.3.0" in capsys.readouterr().out


def test_usage_errors_exit_one(capsys):
    assert main([]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["cost-model", "--nodes", "2"]) == 1
    assert "usage" in capsys.readouterr().err


def test_invalid_environment_exits_one(monkeypatch):
    monkeypatch.setenv("DTOMO_LOG_LEVEL", "loud")
    assert main(["info"]) == 1


def test_cost_model_single_point(capsys):
    assert main(["cost-model", "--nodes", "4", "--image-bytes", "100", "--data-bytes", "400"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out == [
        "Memory(4) = D/4 + 3X = 400.0 bytes",
        "Communication(4) = 2(M-1)/M X = 1.5X = 150.0 bytes",
    ]


def test_cost_model_limit(capsys):
    assert main(["cost-model", "--nodes", "inf", "--image-bytes", "100", "--data-bytes", "400"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "Memory(inf) = D/inf + 3X = 300.0 bytes"
    assert out[1] == "Communication(inf) = 2(M-1)/M X = 2X = 200.0 bytes"


def test_cost_model_table_and_csv(tmp_path, capsys):
    csv_path = tmp_path / "cost.csv"
    assert main(["cost-model", "--image-bytes", "10", "--data-bytes", "20", "--table", "3", "--csv", str(csv_path)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out == [
        "nodes,memory_bytes,communication_bytes",
        "1,50.0,0.0",
        "2,40.0,10.0",
        "3,36.7,13.3",
        "inf,30.0,20.0",
    ]
    rows = csv_path.read_text(encoding="utf-8").splitlines()
    assert rows[0] == "nodes,memory_bytes,communication_bytes"
    assert len(rows) == 5


def test_cost_model_rejects_bad_nodes():
    assert main(["cost-model", "--nodes", "0", "--image-bytes", "1"]) == 1
    assert main(["cost-model", "--nodes", "two", "--image-bytes", "1"]) == 1


def test_missing_config_file_exits_one(tmp_path, capsys):
    assert main(["reconstruct-ctr", "--config", str(tmp_path / "missing.json")]) == 1
    assert "file not found" in capsys.readouterr().err


def test_missing_phantom_file_exits_three(tmp_path):
    argv = [
        "project",
        "--override", "phantom.kind=file",
        "--override", f"phantom.path={tmp_path / 'nowhere.png'}",
        "--output-dir", str(tmp_path / "out"),
    ]
    assert main(argv) == 3


def test_project_writes_sinogram(tmp_path, capsys):
    argv = ["project", *SMALL, "--override", "noise.nsd=0.77", "--output-dir", str(tmp_path)]
    assert main(argv) == 0
    line = _last_json(capsys)
    run_dir = tmp_path / "study"
    assert line["run_dir"] == str(run_dir)
    sino = load_raw_image(run_dir / "sinogram.raw")
    assert (sino.width, sino.height) == (23, 12)
    assert (run_dir / "manifest.json").exists()


def test_reconstruct_dadmm_small_run(tmp_path, capsys):
    assert main(["reconstruct-dadmm", *SMALL, "--output-dir", str(tmp_path)]) == 0
    line = _last_json(capsys)
    assert line["kind"] == "dadmm"
    assert set(line["rmse"]) == {"dadmm"}
    run_dir = tmp_path / "study"
    for name in ("truth.raw", "dadmm.raw", "dadmm_trace.csv", "dadmm_comm.csv", "summary.json", "config.json"):
        assert (run_dir / name).exists(), name
    summary = json.loads((run_dir / "summary.json").read_text(encoding="utf-8"))
    run = summary["runs"]["dadmm"]
    assert run["nodes"] == 2
    assert run["quantizer"] == "kmeans"
    assert run["iterations"] == 5
    manifest = json.loads((run_dir / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["command"] == "reconstruct-dadmm"
    assert manifest["seeds"] == {"quantizer": 0, "noise": 0}


def test_reruns_are_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert main(["reconstruct-dadmm", *SMALL, "--output-dir", str(tmp_path / name)]) == 0
    for name in ("dadmm.raw", "dadmm_trace.csv", "dadmm_comm.csv", "summary.json"):
        assert (tmp_path / "a" / "study" / name).read_bytes() == (tmp_path / "b" / "study" / name).read_bytes()


def test_reconstruct_ctr_small_run(tmp_path, capsys):
    assert main(["reconstruct-ctr", *SMALL, "--output-dir", str(tmp_path)]) == 0
    line = _last_json(capsys)
    assert line["kind"] == "ctr-baseline"
    assert set(line["rmse"]) == {"ctr"}


def test_scalability_writes_one_comparison_csv(tmp_path, capsys):
    argv = ["scalability", *SMALL, "--override", "partition.node_counts=[2,3]", "--output-dir", str(tmp_path)]
    assert main(argv) == 0
    line = _last_json(capsys)
    assert line["kind"] == "scalability"
    assert set(line["rmse"]) == {"ctr", "dadmm_m2", "dadmm_m3"}
    run_dir = tmp_path / "study"
    rows = (run_dir / "scalability.csv").read_text(encoding="utf-8").splitlines()
    assert rows[0] == "iteration,ctr,dadmm_m2,dadmm_m3"
    assert all(cell for cell in rows[1].split(","))
    summary = json.loads((run_dir / "summary.json").read_text(encoding="utf-8"))
    assert [c["nodes"] for c in summary["comparison"]] == [1, 2, 3]
    assert len(rows) - 1 == max(c["iterations"] for c in summary["comparison"])
    assert summary["runs"]["dadmm_m3"]["iterations"] == 5


def test_sweep_quality_reports_codec_reference(tmp_path, capsys):
    argv = ["sweep-quality", *SMALL, "--override", "sweep.qualities=[30,90]", "--output-dir", str(tmp_path)]
    assert main(argv) == 0
    line = _last_json(capsys)
    assert line["kind"] == "quality-sweep"
    assert line["best_quality"] in (30, 90)
    summary = json.loads((tmp_path / "study" / "summary.json").read_text(encoding="utf-8"))
    assert [q for q, _ in summary["rmse_by_quality"]] == [30, 90]
    reference = dict((q, r) for q, r in summary["reference_by_quality"])
    assert reference[90] < reference[30]
    assert summary["runs"]["dadmm-j_q90"]["quantizer"] == "jpeg"
    assert summary["runs"]["dadmm-j_q30"]["reference_rmse"] == reference[30]


@pytest.mark.parametrize(
    "command,override",
    [("reconstruct-dadmm", "admm.eta1=10"), ("reconstruct-ctr", "ctr.learning_rate=10")],
)
def test_divergence_exits_two(tmp_path, command, override):
    argv = [command, *SMALL, "--override", override, "--output-dir", str(tmp_path)]
    assert main(argv) == 2


def test_info_reports_versions_and_config(capsys):
    assert main(["info", "--override", "partition.nodes=3"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["version"] == "0.3.0"
    assert "numpy" in payload["dependencies"]
    assert payload["config"]["partition"]["nodes"] == 3
    assert len(payload["config_hash"]) == 64
