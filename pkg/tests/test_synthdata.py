import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pmiris.encoding import default_bank, encode
from pmiris.errors import InvalidConfig
from pmiris.manifest import Manifest
from pmiris.matching import match
from pmiris.normalization import PolarIris, align
from pmiris.synthdata import DecayModel, SynthConfig, base_texture, corners_for, generate, \
    write_dataset

STILL = DecayModel(0, 0, 0, 0, 0, 0, 0, 1.0)


def test_no_decay_no_jitter_is_identity():
    cfg = SynthConfig(n_subjects=2, captures_per_eye=(0, 100, 369), decay=STILL, rotation_jitter=0)
    caps = generate(cfg)
    for i in range(0, len(caps), 3):
        a, b, c = (x.polar for x in caps[i:i + 3])
        assert np.array_equal(a.texture, b.texture) and np.array_equal(a.texture, c.texture)
        assert a.mask.all() and c.mask.all()


def test_deterministic():
    cfg = SynthConfig(n_subjects=2, captures_per_eye=(5, 60), seed=9)
    a, b = generate(cfg), generate(cfg)
    for x, y in zip(a, b):
        assert np.array_equal(x.polar.texture, y.polar.texture)
        assert np.array_equal(x.polar.mask, y.polar.mask) and x.corners == y.corners


def test_subject_offset_is_disjoint_and_consistent():
    full = generate(SynthConfig(n_subjects=4, captures_per_eye=(5, 60)))
    tail = generate(SynthConfig(n_subjects=2, captures_per_eye=(5, 60), subject_offset=2))
    assert [c.polar.meta for c in full[8:]] == [c.polar.meta for c in tail]
    assert all(np.array_equal(x.polar.texture, y.polar.texture) for x, y in zip(full[8:], tail))


def test_mask_area_non_increasing_with_pmi():
    cfg = SynthConfig(n_subjects=3, captures_per_eye=(5, 30, 60, 160, 369))
    caps = generate(cfg)
    for i in range(0, len(caps), 5):
        areas = [int(c.polar.mask.sum()) for c in caps[i:i + 5]]
        assert areas == sorted(areas, reverse=True)


def test_alignment_undoes_rotation():
    cfg = SynthConfig(n_subjects=2, captures_per_eye=(0, 0), decay=STILL, rotation_jitter=0.3)
    caps = generate(cfg)
    assert any(c.rotation_columns for c in caps)
    base = np.rint(np.clip(base_texture(cfg, 0, 0), 0, 1) * 255) / 255
    for c in caps[:2]:
        assert np.array_equal(align(c.polar, c.corners).texture, base)


@given(st.integers(-40, 40))
def test_corners_roundtrip(cols):
    from pmiris.normalization import corner_shift
    assert corner_shift(corners_for(cols)) == cols


def test_genuine_distance_grows_with_pmi():
    cfg = SynthConfig(n_subjects=4, captures_per_eye=(5, 24, 369))
    bank = default_bank()
    caps = generate(cfg)
    early, late = [], []
    for i in range(0, len(caps), 3):
        codes = [encode(align(c.polar, c.corners), bank) for c in caps[i:i + 3]]
        early.append(match(codes[0], codes[1]).distance)
        late.append(match(codes[0], codes[2]).distance)
    assert np.mean(late) > np.mean(early)


def test_validation():
    with pytest.raises(InvalidConfig):
        SynthConfig(captures_per_eye=(60, 5)).validate()
    with pytest.raises(InvalidConfig):
        SynthConfig(n_subjects=1).validate()
    with pytest.raises(InvalidConfig):
        DecayModel(blur_per_hour=-1).validate()


def test_config_roundtrip():
    cfg = SynthConfig(n_subjects=3, captures_per_eye=(1, 2), decay=DecayModel(sensor_noise=0.2))
    assert SynthConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_write_dataset(tmp_path):
    cfg = SynthConfig(n_subjects=2, captures_per_eye=(5, 60))
    caps = generate(cfg)
    path = write_dataset(caps, tmp_path, cfg)
    m = Manifest.load(path)
    assert len(m) == len(caps)
    e = m.entries[1]
    back = PolarIris.load(m.resolve(e.image_path), m.resolve(e.mask_path), e.meta)
    assert np.array_equal(back.texture, caps[1].polar.texture)
    assert np.array_equal(back.mask, caps[1].polar.mask)
    assert json.loads(path.read_text())["synth_config"] == cfg.to_dict()


def test_identity_signal_early():
    cfg = SynthConfig(n_subjects=4, captures_per_eye=(5, 16, 24))
    codes = [encode(align(c.polar, c.corners), default_bank()) for c in generate(cfg)]
    gen, imp = [], []
    for i in range(len(codes)):
        for j in range(i + 1, len(codes)):
            same = i // 3 == j // 3
            (gen if same else imp).append(match(codes[i], codes[j]).distance)
    assert np.mean(gen) < np.mean(imp)
