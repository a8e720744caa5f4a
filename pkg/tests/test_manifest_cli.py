import json
import shutil
from pathlib import Path

import pytest

from pmiris.cli import main
from pmiris.errors import InsufficientData, InvalidConfig, ParseError
from pmiris.manifest import Manifest, parse_json

FIXTURE = Path(__file__).parent / "fixtures" / "four_subjects"


def test_parse_error_has_line_number():
    with pytest.raises(ParseError) as e:
        parse_json('{\n "a": 1,\n "b": \n}', "m.json")
    assert e.value.lineno == 4


def test_malformed_manifest_exit_code(tmp_path, capsys):
    bad = tmp_path / "m.json"
    bad.write_text('{"entries": [\n  {"capture_id": }\n]}')
    assert main(["encode", "--manifest", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert "line 2" in capsys.readouterr().err


def test_empty_manifest(tmp_path):
    p = tmp_path / "m.json"
    p.write_text('{"entries": []}')
    with pytest.raises(InsufficientData):
        Manifest.load(p)
    assert main(["encode", "--manifest", str(p), "--out", str(tmp_path / "o")]) == 1


def _entry(cid, **kw):
    return {"capture_id": cid, "subject_id": "A", "eye": "L", "pmi_hours": 5,
            "image_path": f"{cid}.pgm", **kw}


@pytest.mark.parametrize("bad", [
    {"entries": [_entry("x"), _entry("x")]},
    {"entries": [_entry("x", eye="Q")]},
    {"entries": [_entry("x", pmi_hours=-1)]},
    {"entries": [_entry("x", kind="fisheye")]},
    {"entries": [{"capture_id": "x"}]},
    {"items": []},
])
def test_manifest_validation(bad):
    with pytest.raises(InvalidConfig):
        Manifest.from_dict(bad)


def test_manifest_roundtrip(tmp_path):
    m = Manifest.from_dict({"reference_angle": 0.5,
                            "entries": [_entry("a", corners=[[0, 0], [1, 1]], mask_path="m.pgm")]},
                           tmp_path)
    m.save(tmp_path / "m.json")
    assert Manifest.load(tmp_path / "m.json", require_paths=False) == m
    assert m.missing_paths() == [("a", "a.pgm"), ("a", "m.pgm")]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    cfg = root / "synth.json"
    cfg.write_text(json.dumps({"n_subjects": 3, "captures_per_eye": [5, 40, 200]}))
    assert main(["synth", "--config", str(cfg), "--out", str(root / "data")]) == 0
    return root / "data" / "manifest.json"


def test_segment_polar_is_noop(dataset, tmp_path, capsys):
    assert main(["segment", "--manifest", str(dataset), "--out", str(tmp_path)]) == 0
    assert "nothing to segment" in capsys.readouterr().out
    assert not (tmp_path / "segmentation").exists()


def test_missing_image_is_partial(dataset, tmp_path):
    data = tmp_path / "data"
    shutil.copytree(dataset.parent, data)
    victim = json.loads((data / "manifest.json").read_text())["entries"][0]
    (data / victim["image_path"]).unlink()
    out = tmp_path / "codes"
    assert main(["encode", "--manifest", str(data / "manifest.json"), "--out", str(out)]) == 2
    errors = json.loads((out / "encode_errors.json").read_text())
    assert [e["capture_id"] for e in errors] == [victim["capture_id"]]
    assert len(json.loads((out / "index.json").read_text())["codes"]) == 17


def test_encode_match_evaluate(dataset, tmp_path, monkeypatch):
    monkeypatch.setenv("PMIRIS_OUT", str(tmp_path / "env"))
    assert main(["encode", "--manifest", str(dataset), "--jobs", "2"]) == 0
    codes = tmp_path / "env"
    assert main(["encode", "--manifest", str(dataset), "--out", str(tmp_path / "serial")]) == 0
    for f in sorted(p.name for p in codes.iterdir()):
        assert (codes / f).read_bytes() == (tmp_path / "serial" / f).read_bytes()

    assert main(["match", "--codes", str(codes), "--out", str(tmp_path / "m")]) == 0
    scores = tmp_path / "m" / "scores.csv"
    assert len(scores.read_text().splitlines()) == 1 + 18 * 17 // 2
    assert main(["evaluate", "--scores", str(scores), "--out", str(tmp_path / "e1")]) == 0
    assert main(["evaluate", "--codes", str(codes), "--out", str(tmp_path / "e2")]) == 0
    r1 = (tmp_path / "e1" / "report.json").read_bytes()
    assert r1 == (tmp_path / "e2" / "report.json").read_bytes()
    for rep in json.loads(r1):
        if rep["eer"] is not None:
            f = rep["fnmr_at"]
            assert f["0.001"] >= f["0.01"] >= f["0.05"]


def test_evaluate_needs_one_source(tmp_path):
    assert main(["evaluate", "--out", str(tmp_path)]) == 1


def test_golden_fixture(tmp_path):
    codes, ev = tmp_path / "codes", tmp_path / "eval"
    assert main(["encode", "--manifest", str(FIXTURE / "manifest.json"), "--out", str(codes)]) == 0
    assert main(["evaluate", "--codes", str(codes), "--out", str(ev)]) == 0
    assert (ev / "report.json").read_bytes() == (FIXTURE / "golden_report.json").read_bytes()
