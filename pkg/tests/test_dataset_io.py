import json

import numpy as np
import pytest

from bifold.dataset_io import DatasetError, export_dataset, frame_name, load_dataset, mask_name


@pytest.fixture
def exported(tiny_data, tmp_path):
    export_dataset(tiny_data, tmp_path)
    return tmp_path


def test_round_trip_bit_exact(tiny_data, exported):
    back = load_dataset(exported)
    assert back.vocabulary == tiny_data.vocabulary
    assert back.config == tiny_data.config
    assert back.seed == tiny_data.seed
    for a, b in zip(tiny_data.episodes, back.episodes):
        assert a.keyframe_indices == b.keyframe_indices and a.steps == b.steps
        assert a.seed == b.seed and a.scenario == b.scenario and a.base == b.base
        for fa, fb in zip(a.frames, b.frames):
            assert np.array_equal(fa.image, fb.image) and np.array_equal(fa.mask, fb.mask)
            assert fa.image.dtype == fb.image.dtype


def test_file_layout_and_manifest(tiny_data, exported):
    m = json.loads((exported / "manifest.json").read_text())
    assert m["vocabulary"] == tiny_data.vocabulary
    rec = m["episodes"][1]
    assert rec["files"][0]["frame"] == frame_name(1, 0) == "ep00001_f0000.pgm"
    assert rec["files"][0]["mask"] == mask_name(1, 0) == "ep00001_m0000.pgm"
    assert (exported / "ep00001_f0000.pgm").read_bytes().startswith(b"P5\n16 16\n255\n")
    words = {w for ep in m["episodes"] for st in ep["steps"] for w in st["instruction"].split()}
    assert words <= set(m["vocabulary"])


def test_truncated_frame_named(exported):
    p = exported / "ep00002_f0003.pgm"
    p.write_bytes(p.read_bytes()[:-5])
    with pytest.raises(DatasetError, match="ep00002_f0003.pgm"):
        load_dataset(exported)


def test_missing_frame_named(exported):
    (exported / "ep00000_m0001.pgm").unlink()
    with pytest.raises(DatasetError, match="ep00000_m0001.pgm"):
        load_dataset(exported)


def test_checksum_mismatch(exported):
    p = exported / "ep00000_f0000.pgm"
    raw = bytearray(p.read_bytes())
    raw[-1] ^= 0xFF
    p.write_bytes(bytes(raw))
    with pytest.raises(DatasetError, match="checksum"):
        load_dataset(exported)


@pytest.mark.parametrize("mutate", [
    lambda m: m.pop("episodes"),
    lambda m: m.update(format_version=99),
    lambda m: m["episodes"][0].pop("steps"),
    lambda m: m["config"].update(bogus=1),
    lambda m: m["episodes"][0]["keyframe_indices"].append(999),
])
def test_malformed_manifest(exported, mutate):
    path = exported / "manifest.json"
    m = json.loads(path.read_text())
    mutate(m)
    path.write_text(json.dumps(m))
    with pytest.raises(DatasetError):
        load_dataset(exported)


def test_not_json_and_missing_manifest(exported, tmp_path):
    (exported / "manifest.json").write_text("{not json")
    with pytest.raises(DatasetError, match="JSON"):
        load_dataset(exported)
    with pytest.raises(DatasetError, match="manifest"):
        load_dataset(tmp_path / "nowhere")
