import numpy as np
import pytest

from salientseg import pipeline as pl
from salientseg.config import Config, TrackParams
from salientseg.imagecore import GrayImage
from salientseg.surf import Feature, InterestPoint
from salientseg.synth import random_spec, render
from salientseg.tracking import match, matched_points, transfer_memberships

import oracles


def _feats(pos, desc, mem=None):
    out = []
    for i, ((x, y), d) in enumerate(zip(pos, desc)):
        out.append(Feature(InterestPoint(int(x), int(y), 1.2, 1.0, 1, 9), np.asarray(d, dtype=np.float64), 0,
                           None if mem is None else np.asarray(mem[i], dtype=np.float64)))
    return out


def _unit_rows(rng, n):
    d = rng.random((n, 36))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


@pytest.fixture(scope="module")
def nn_model(mosaic_training_set):
    return pl.train(mosaic_training_set, Config()).classifier


def test_identical_frames_self_match():
    rng = np.random.default_rng(0)
    f = _feats(rng.integers(0, 200, (40, 2)), _unit_rows(rng, 40))
    m = match(f, f, radius=60, threshold=10.0)
    assert len(m) == 40
    assert all(a.prev == a.curr and a.distance == 0.0 for a in m)


def test_orthogonal_descriptors_never_match():
    eye = np.eye(36)
    prev = _feats([(10, 10)] * 18, eye[:18])
    curr = _feats([(12, 10)] * 18, eye[18:])
    assert match(prev, curr, radius=60, threshold=0.5) == []
    assert match(prev, [], radius=60) == []


def test_matches_brute_force_oracle():
    rng = np.random.default_rng(1)
    for _ in range(5):
        pos = rng.uniform(0, 256, (60, 2)).astype(int)
        desc = _unit_rows(rng, 60)
        cpos = pos + rng.integers(-15, 16, (60, 2))
        cdesc = desc + rng.normal(0, 0.05, desc.shape)
        perm = rng.permutation(60)
        prev, curr = _feats(pos, desc), _feats(cpos[perm], cdesc[perm])
        got = [(m.prev, m.curr) for m in match(prev, curr, radius=30, threshold=0.3)]
        want = oracles.constrained_match(pos.astype(float), desc, cpos[perm].astype(float), cdesc[perm], 30, 0.3)
        assert sorted(got) == sorted(want)


def test_greedy_one_to_one():
    d = np.eye(36)[:3]
    prev = _feats([(0, 0), (1, 0)], [d[0], d[0] + 0.01 * d[1]])
    curr = _feats([(0, 1)], [d[0]])
    m = match(prev, curr, threshold=0.5)
    assert [(a.prev, a.curr) for a in m] == [(0, 0)]


def test_transfer_cases():
    rng = np.random.default_rng(2)
    pos, desc = rng.integers(0, 100, (10, 2)), _unit_rows(rng, 10)
    mem = rng.random((10, 3))
    prev, curr = _feats(pos, desc, mem), _feats(pos, desc)
    full = transfer_memberships(match(prev, curr, threshold=1.0), prev, curr)
    np.testing.assert_array_equal(np.array([f.membership for f in full]), mem)
    assert all(f.membership is None for f in transfer_memberships([], prev, curr))
    part = match(prev[:4], curr, threshold=1.0)
    out = transfer_memberships(part, prev, curr)
    assert {i for i, f in enumerate(out) if f.membership is not None} == {m.curr for m in part}
    assert all(f.membership is None for f in curr)  # input untouched
    p1, p2 = matched_points(part, prev, curr)
    assert p1.shape == p2.shape == (len(part), 2)


def test_static_repeated_frame(nn_model):
    img, _ = render(random_spec(40))
    tk = pl.Tracker(nn_model, Config())
    first = tk.step(GrayImage(img))
    for _ in range(2):
        fr = tk.step(GrayImage(img))
        assert len(fr.matches) >= 0.9 * len(first.features)
        np.testing.assert_array_equal(fr.seg.classes, first.seg.classes)
        assert fr.mode == "per-frame"  # no motion: F is not determined


def test_predicted_position_error_decreases_after_burn_in(nn_model):
    tk = pl.Tracker(nn_model, Config())
    errors = []  # camera translating along x at one unit per frame
    for k in range(25):
        res = pl.FrameResult(k, [], [], None, "tracking")
        tk._update_pose(res, np.eye(3), np.array([-1.0, 0.0, 0.0]))
        if res.predicted is not None:
            errors.append(np.linalg.norm(res.predicted - res.centre))
    burn = errors[3:]
    assert burn[-1] < burn[0]
    assert np.mean(burn[-5:]) < np.mean(burn[:5])


def test_track_rows_and_logs(nn_model, tmp_path):
    img, _ = render(random_spec(41))
    tk = pl.Tracker(nn_model, Config())
    frames = [tk.step(GrayImage(img)), tk.step(GrayImage(img))]
    pl.write_track_logs(tmp_path / "t.csv", tmp_path / "p.csv", frames)
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == ",".join(pl.TRACK_COLUMNS)
    assert (tmp_path / "p.csv").read_text().splitlines()[0] == ",".join(pl.POSE_COLUMNS)
    assert frames[0].track_row()[:2] == [0, len(frames[0].features)]


def test_tracking_disabled_is_per_frame(nn_model):
    img, _ = render(random_spec(42))
    cfg = Config(track=TrackParams(enabled=False))
    tk = pl.Tracker(nn_model, cfg)
    a, b = tk.step(GrayImage(img)), tk.step(GrayImage(img))
    assert b.matches == [] and b.mode == "per-frame"
    np.testing.assert_array_equal(a.seg.classes, b.seg.classes)
