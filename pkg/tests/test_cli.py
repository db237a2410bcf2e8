import json
import shutil
import socket

import pytest

from checkfields.cli import (EXIT_BACKEND, EXIT_CONFIG, EXIT_FAILED, EXIT_INPUT, EXIT_OK, main)
from checkfields.evaluation import detection_metrics, load_ground_truth
from checkfields.records import load_detections


@pytest.fixture
def inputs(fixtures_dir, tmp_path):
    d = tmp_path / "in"
    shutil.copytree(fixtures_dir / "images", d)
    return d


def detect(inputs, out, fixtures_dir, *extra):
    return main(["detect", str(inputs), "-o", str(out),
                 "--replay", str(fixtures_dir / "replay"), *extra])


def tree(d):
    return {p.name: p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_detect_writes_results_and_summary(inputs, tmp_path, fixtures_dir, capsys):
    out = tmp_path / "out"
    assert detect(inputs, out, fixtures_dir, "--overlays", "--debug", "--jobs", "2") == EXIT_OK
    assert sorted(p.name for p in out.glob("check_*.json")) == \
        ["check_001.json", "check_002.json", "check_003.json"]
    assert len(list(out.glob("check_*.png"))) == 3
    assert len(list((out / "debug").glob("*.signature.json"))) == 3
    summary = json.loads((out / "run_summary.json").read_text())
    assert summary["checks"] == 3 and summary["skipped"] == []
    assert summary["config"]["c_o"] == 0.8 and summary["config"]["jobs"] == 2
    assert summary["detection_rate"]["memo"] == pytest.approx(2 / 3)
    assert summary["failures"] == [{"source_id": "check_002", "field": "memo",
                                    "status": "absent", "detail": "no reference text"}]
    assert not (out / "run_checkpoint.json").exists()


def test_rerun_is_byte_identical(inputs, tmp_path, fixtures_dir):
    a, b = tmp_path / "a", tmp_path / "b"
    assert detect(inputs, a, fixtures_dir) == EXIT_OK
    assert detect(inputs, b, fixtures_dir, "--jobs", "3") == EXIT_OK
    ta, tb = tree(a), tree(b)
    ta.pop("run_summary.json"), tb.pop("run_summary.json")  # jobs differs in the echoed config
    assert ta == tb
    c = tmp_path / "c"
    detect(inputs, c, fixtures_dir)
    assert tree(a) == tree(c)


def test_corrupt_image_skipped(inputs, tmp_path, fixtures_dir):
    (inputs / "check_003.png").write_bytes(b"\x89PNG broken")
    out = tmp_path / "out"
    assert detect(inputs, out, fixtures_dir) == EXIT_OK
    summary = json.loads((out / "run_summary.json").read_text())
    assert summary["checks"] == 2
    assert [s["file"] for s in summary["skipped"]] == ["check_003.png"]


def test_all_corrupt_is_failure(tmp_path, fixtures_dir):
    d = tmp_path / "in"
    d.mkdir()
    (d / "x.png").write_bytes(b"nope")
    assert detect(d, tmp_path / "out", fixtures_dir) == EXIT_FAILED


def test_refuses_without_backend(inputs, tmp_path):
    assert main(["detect", str(inputs), "-o", str(tmp_path / "o")]) == EXIT_CONFIG
    assert main(["detect", str(inputs), "-o", str(tmp_path / "o"), "--live"]) == EXIT_CONFIG


def test_empty_input(tmp_path, fixtures_dir):
    (tmp_path / "in").mkdir()
    assert detect(tmp_path / "in", tmp_path / "o", fixtures_dir) == EXIT_INPUT


def test_bad_config_value(inputs, tmp_path, fixtures_dir):
    assert detect(inputs, tmp_path / "o", fixtures_dir, "--c-o", "1.5") == EXIT_CONFIG


def closed_port():
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    return port


def test_outage_checkpoint_and_resume(inputs, tmp_path, fixtures_dir):
    out = tmp_path / "out"
    url = f"http://127.0.0.1:{closed_port()}"
    code = main(["detect", str(inputs), "-o", str(out), "--live", "--vlm-url", url,
                 "--mllm-url", url, "--max-retries", "0", "--deadline", "2"])
    assert code == EXIT_BACKEND
    ckpt = json.loads((out / "run_checkpoint.json").read_text())
    assert ckpt["pending"] == ["check_001", "check_002", "check_003"] and ckpt["done"] == []
    assert detect(inputs, out, fixtures_dir, "--resume") == EXIT_OK
    assert not (out / "run_checkpoint.json").exists()
    assert json.loads((out / "run_summary.json").read_text())["checks"] == 3


def test_resume_skips_finished(inputs, tmp_path, fixtures_dir):
    out = tmp_path / "out"
    assert detect(inputs, out, fixtures_dir) == EXIT_OK
    done = out / "check_001.json"
    obj = json.loads(done.read_text())
    obj["fields"][0]["detail"] = "marker"
    done.write_text(json.dumps(obj))
    assert detect(inputs, out, fixtures_dir, "--resume") == EXIT_OK
    assert json.loads(done.read_text())["fields"][0]["detail"] == "marker"
    assert detect(inputs, out, fixtures_dir) == EXIT_OK
    assert json.loads(done.read_text())["fields"][0]["detail"] == ""


@pytest.fixture
def detected(inputs, tmp_path, fixtures_dir):
    out = tmp_path / "det"
    assert detect(inputs, out, fixtures_dir) == EXIT_OK
    return out


def test_evaluate(detected, tmp_path, fixtures_dir, capsys):
    rep = tmp_path / "rep"
    code = main(["evaluate", str(detected), "--truth", str(fixtures_dir / "truth.json"),
                 "--baseline", str(detected), "-o", str(rep)])
    assert code == EXIT_OK
    report = json.loads((rep / "report.json").read_text())
    assert report["detection"]["overall"] == {"miou": 1.0, "acc@0.25": 1.0, "acc@0.5": 1.0,
                                              "n": 26}
    assert report["baseline"]["overall"]["miou"] == 1.0
    ner = report["ner"]
    assert ner["fields"]["micr"]["mean"] > 0  # one misread MICR character on check_002
    assert ner["fields"]["date"] == {"mean": 0.0, "std": 0.0, "median": 0.0, "total": 3}
    assert 0 < ner["weighted_mean"] < 0.05
    text = (rep / "report.txt").read_text()
    assert "Overall mean" in text and "Weighted mean" in text


def test_evaluate_missing_ids(detected, tmp_path, fixtures_dir):
    (detected / "check_002.json").unlink()
    args = ["evaluate", str(detected), "--truth", str(fixtures_dir / "truth.json"),
            "-o", str(tmp_path / "rep")]
    assert main(args) == EXIT_INPUT
    assert main(args + ["--allow-missing"]) == EXIT_OK


def test_export_round_trip(detected, tmp_path):
    coco = tmp_path / "labels.json"
    assert main(["export-labels", str(detected), "-o", str(coco)]) == EXIT_OK
    data = json.loads(coco.read_text())
    assert len(data["categories"]) == 9 and len(data["annotations"]) == 26
    r = detection_metrics(load_detections(detected), load_ground_truth(coco))
    assert (r.overall.miou, r.overall.acc_at_25, r.overall.acc_at_50) == (1.0, 1.0, 1.0)


def test_render(detected, tmp_path, fixtures_dir):
    png = tmp_path / "r.png"
    assert main(["render", str(fixtures_dir / "images" / "check_001.png"),
                 str(detected / "check_001.json"), "-o", str(png)]) == EXIT_OK
    assert png.read_bytes()[:4] == b"\x89PNG"


def test_validate_config(tmp_path, capsys):
    p = tmp_path / "c.yaml"
    p.write_text("t_max: 4\n")
    assert main(["validate-config", "--config", str(p), "--c-o", "0.75"]) == EXIT_OK
    shown = json.loads(capsys.readouterr().out)
    assert shown["t_max"] == 4 and shown["c_o"] == 0.75
    p.write_text("t_max: 0\n")
    assert main(["validate-config", "--config", str(p)]) == EXIT_CONFIG
