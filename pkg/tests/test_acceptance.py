"""Acceptance criteria: each test carries its criterion number and wall-clock limit.

The terminal summary prints one PASS/FAIL line per criterion.
"""

import time

import numpy as np
import pytest
from scipy import ndimage

from salientseg import pipeline
from salientseg.classify import (MlpModel, TrainConfig, mlp_gradient, mlp_loss, one_hot_targets, train_lm,
                                 train_rprop)
from salientseg.config import Config, derive_seed
from salientseg.geometry import (camera_matrix, direction_angle, project, ransac_f, rotation_angle, triangulate,
                                 two_view)
from salientseg.imagecore import GrayImage, Rect, box_sum, haar_x, haar_y, integral
from salientseg.pose import OrientationEKF, PositionKF
from salientseg.segment import SegParams, build_index, membership_values, segment
from salientseg.surf import DetectorParams, Feature, InterestPoint, describe_many, detect, extract, hessian_responses
from salientseg.synth import random_spec, render
from salientseg.texmodel import TrainingSet, variability, variability_matrix

import oracles
from fixtures import linear_fixture, xor_fixture


class Timer:
    def __init__(self, limit):
        self.limit = limit

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start
        if exc[0] is None:
            assert self.elapsed < self.limit, f"took {self.elapsed:.1f} s, limit {self.limit} s"


@pytest.mark.criterion(1, "integral image, box sums and Haar responses vs brute force")
def test_c01_integral_oracle():
    rng = np.random.default_rng(101)
    with Timer(5.0):
        for _ in range(50):
            h, w = rng.integers(1, 65, 2)
            img = rng.random((h, w))
            ii = integral(img)
            np.testing.assert_allclose(ii.table, np.cumsum(np.cumsum(img, 0), 1), atol=1e-9, rtol=0)
            for _ in range(20):
                x0, y0 = rng.integers(-4, w + 1), rng.integers(-4, h + 1)
                x1, y1 = x0 + rng.integers(0, w + 1), y0 + rng.integers(0, h + 1)
                assert abs(box_sum(ii, Rect(x0, y0, x1, y1)) - oracles.box_sum(img, x0, y0, x1, y1)) <= 1e-9
                cx, cy = rng.integers(-2, w + 2), rng.integers(-2, h + 2)
                size = 2 * int(rng.integers(1, 9))
                assert abs(haar_x(ii, cx, cy, size) - oracles.haar_x(img, cx, cy, size)) <= 1e-9
                assert abs(haar_y(ii, cx, cy, size) - oracles.haar_y(img, cx, cy, size)) <= 1e-9


@pytest.mark.criterion(2, "blob localization and scale selection vs dense-evaluation oracle")
def test_c02_detector_localization():
    sizes = (9, 15, 21, 27, 39, 51)
    middle = {15, 21, 27, 39}  # layers that have a neighbour above and below in some octave
    cx = cy = 56
    chosen = []
    with Timer(10.0):
        for sigma in (1.6, 2.4, 3.5):
            img = oracles.gaussian_blob(112, 112, cx, cy, sigma)
            params = DetectorParams(octaves=2)
            stack = hessian_responses(integral(img), params)
            dense = {}
            for s in sizes:
                dense[s] = oracles.hessian_det(img, s)
                np.testing.assert_allclose(stack.det[s], dense[s], atol=1e-12, rtol=0)
                m = s // 2 + 1  # ignore the zero-padded rim
                dense[s] = dense[s][m:-m, m:-m]
            best = max(sizes, key=lambda s: dense[s].max())
            y, x = np.unravel_index(np.argmax(dense[best]), dense[best].shape)
            m = best // 2 + 1
            assert abs(x + m - cx) <= 1 and abs(y + m - cy) <= 1
            chosen.append(best)
            if best in middle:
                top = detect(stack, params)[0]
                assert top.filter_size == best
                assert abs(top.x - cx) <= 1 and abs(top.y - cy) <= 1
    assert chosen[0] < chosen[1] < chosen[2]


@pytest.mark.criterion(3, "descriptor brightness/contrast invariance and unit norm")
def test_c03_descriptor_invariance():
    rng = np.random.default_rng(103)
    with Timer(5.0):
        img = ndimage.gaussian_filter(rng.standard_normal((160, 160)), 2.0)
        img = 0.45 + 0.2 * img / np.abs(img).max()
        pts = [f.point for f in extract(GrayImage(img))]
        assert len(pts) >= 10
        base = describe_many(integral(img), pts)
        np.testing.assert_allclose(describe_many(integral(img + 0.3), pts), base, atol=1e-9, rtol=0)
        np.testing.assert_allclose(describe_many(integral(img * 2.5), pts), base, atol=1e-9, rtol=0)
        norms = np.linalg.norm(base, axis=1)
        assert np.all(norms > 0)
        np.testing.assert_allclose(norms, 1.0, atol=1e-9)
        flat = describe_many(integral(np.full((160, 160), 0.4)), pts)
        np.testing.assert_array_equal(flat, 0.0)


@pytest.mark.criterion(4, "pairwise variability vs brute force, symmetry, singletons")
def test_c04_variability_oracle():
    rng = np.random.default_rng(104)
    with Timer(2.0):
        for _ in range(10):
            n1, n2 = rng.integers(1, 51, 2)
            x, y = rng.random((n1, 36)), rng.random((n2, 36))
            assert abs(variability(x, y) - oracles.variability(x, y)) <= 1e-12
        desc, lab = rng.random((90, 36)), rng.integers(1, 4, 90)
        ts = TrainingSet([Feature(InterestPoint(i, 0, 1.2, 1.0, 1, 9), d, int(c))
                          for i, (d, c) in enumerate(zip(desc, lab))])
        m = variability_matrix(ts)
        np.testing.assert_array_equal(m, m.T)
        a, b = np.zeros((1, 36)), np.zeros((1, 36))
        b[0, :4] = 0.5  # distance exactly 1
        assert variability(a, a) == 0.0 and variability(a, b) == 1.0 and variability(b, a) == 1.0


def _rel_error(g, fd):
    return np.max(np.abs(g - fd) / np.maximum(np.abs(g) + np.abs(fd), 1e-8))


@pytest.mark.criterion(5, "backprop vs central finite differences on a 36-8-4-3 net")
def test_c05_gradient_check():
    rng = np.random.default_rng(105)
    worst = 0.0
    with Timer(10.0):
        for _ in range(100):
            m = MlpModel.random((36, 8, 4, 3), rng)
            x, t = rng.normal(size=(1, 36)), one_hot_targets(rng.integers(1, 4, 1))
            g = np.concatenate([a.ravel() for a in mlp_gradient(m, x, t)])
            w, h = m.flat(), 1e-5
            fd = np.empty_like(w)
            for j in range(w.size):
                wp, wm = w.copy(), w.copy()
                wp[j] += h
                wm[j] -= h
                fd[j] = (mlp_loss(MlpModel.from_flat(m.layers, wp), x, t)
                         - mlp_loss(MlpModel.from_flat(m.layers, wm), x, t)) / (2 * h)
            worst = max(worst, _rel_error(g, fd))
    assert worst <= 1e-4


@pytest.mark.criterion(6, "RPROP on embedded XOR and LM on a linear fixture, both deterministic")
def test_c06_trainers():
    with Timer(30.0):
        x, t = xor_fixture(200, np.random.default_rng(3))
        cfg = TrainConfig(max_epochs=2000, target_error=0.05 * len(x), seed=3)
        a, b = train_rprop(x, t, cfg), train_rprop(x, t, cfg)
        assert a.best_loss <= 0.05 * len(x) and len(a.losses) - 1 <= 2000
        np.testing.assert_array_equal(a.model.flat(), b.model.flat())
        x, t = linear_fixture(np.random.default_rng(1))
        cfg = TrainConfig(algorithm="lm", hidden=(5, 5), max_epochs=20, target_error=1e-7, seed=0)
        a, b = train_lm(x, t, cfg), train_lm(x, t, cfg)
        assert a.best_loss < 1e-6 and len(a.losses) - 1 <= 20
        np.testing.assert_array_equal(a.model.flat(), b.model.flat())


@pytest.mark.criterion(7, "segmentation membership values vs direct double loop")
def test_c07_segmentation_oracle():
    rng = np.random.default_rng(107)
    with Timer(5.0):
        for _ in range(10):
            n = int(rng.integers(5, 40))
            pos, mem = rng.uniform(-6, 38, (n, 2)), rng.random((n, 3))
            p = SegParams(r=float(rng.uniform(4, 14)), sigma=float(rng.uniform(2, 16)), t=0.0)
            idx = build_index(pos, mem, p.r)
            V, _ = membership_values(32, 32, idx, p)
            Vo, co = oracles.segmentation(32, 32, pos, mem, p.r, p.sigma, p.t)
            np.testing.assert_allclose(V, Vo, atol=1e-12, rtol=0)
            seg = segment(32, 32, idx, p)
            np.testing.assert_array_equal(seg.classes, co)
            for y in range(32):
                for x in range(32):
                    if idx.query(x, y, p.r).size == 0:
                        assert seg.classes[y, x] == 0
            prev = seg.classes
            for t in (0.002, 0.005, 0.01, 0.03, 0.1):
                cur = segment(32, 32, idx, SegParams(r=p.r, sigma=p.sigma, t=t)).classes
                assert np.all((cur == prev) | (cur == 0))
                prev = cur


def _outliers(rng, F, n, tol):
    a, b = [], []
    while len(a) < n:
        p, q = rng.uniform(0, 640, 2), rng.uniform(0, 480, 2)
        if oracles.sampson(F, [p], [q])[0] > 3 * tol:
            a.append(p)
            b.append(q)
    return np.array(a), np.array(b)


@pytest.mark.criterion(8, "two-view geometry with 30% outliers")
def test_c08_two_view_geometry():
    rng = np.random.default_rng(108)
    with Timer(10.0):
        x1, x2, X, K, R, t = oracles.synthetic_pair(rng, 100)
        n_out = 43  # 30 % of the 143 correspondences
        o1, o2 = _outliers(rng, oracles.fundamental_from_pose(K, R, t), n_out, 1.0)
        p1, p2 = np.vstack([x1, o1]), np.vstack([x2, o2])
        seed = derive_seed(0, "ransac", 0)
        res = ransac_f(p1, p2, tol=1.0, rng=seed)
        assert np.median(oracles.sampson(res.F, x1, x2)) < 1e-6
        geo = two_view(p1, p2, K, tol=1.0, rng=seed)
        assert rotation_angle(geo.R, R) < 1e-4
        assert direction_angle(geo.t, t / np.linalg.norm(t)) < 1e-4
        P1, P2 = camera_matrix(K), camera_matrix(K, R, t)
        Xh, ok = triangulate(P1, P2, x1, x2)
        assert ok.all()
        for P, x in ((P1, x1), (P2, x2)):
            back, _ = project(P, Xh)
            assert np.max(np.linalg.norm(back - x, axis=1)) < 1e-8


@pytest.mark.criterion(9, "Kalman position filter and quaternion EKF")
def test_c09_filters():
    with Timer(5.0):
        kf = PositionKF(accel_noise=0.0, meas_noise=0.0)
        p0, v, dt = np.array([2.0, -1.0, 0.5]), np.array([0.4, 0.2, -0.1]), 0.5
        kf.x[:3] = p0
        kf.update(p0)
        kf.predict(dt)
        kf.update(p0 + v * dt)  # velocity becomes observable
        for k in range(2, 50):
            want = p0 + v * k * dt
            assert np.max(np.abs(kf.predict(dt) - want)) <= 1e-12
            kf.update(want)

        q0 = oracles.quat_axis_angle([0.3, -1.0, 2.0], 0.8)
        rate, step = 0.5, 0.01
        ekf = OrientationEKF(gyro_noise=0.0)
        ekf.x = np.r_[q0, 0.0, 0.0, rate]
        for k in range(1, 1001):
            q = ekf.predict(step)
            assert abs(np.linalg.norm(q) - 1.0) <= 1e-12
            want = oracles.quat_mul(q0, oracles.quat_axis_angle([0, 0, 1], rate * k * step))
            assert np.max(np.abs(q - want)) <= 1e-6

        rng = np.random.default_rng(109)
        ekf = OrientationEKF()
        ekf.x[4:] = [0.2, 0.1, -0.3]
        for _ in range(1000):
            ekf.predict(0.1)
            assert abs(np.linalg.norm(ekf.q) - 1.0) <= 1e-12
            ekf.update(oracles.quat_axis_angle(rng.normal(size=3), rng.uniform(0, np.pi)))
            assert abs(np.linalg.norm(ekf.q) - 1.0) <= 1e-12


def _table(stats):
    lines = [f"{'':12s}" + "".join(f"{k:>9s}" for k in ("mean", "std", "min", "max"))]
    for name, s in stats.items():
        lines.append(f"{name:12s}" + "".join(f"{100 * s[k]:9.2f}" for k in ("mean", "std", "min", "max")))
    return lines


@pytest.mark.criterion(10, "end-to-end synthetic benchmark, NN and MLP-RPROP")
def test_c10_synthetic_benchmark(report):
    with Timer(180.0):
        res = pipeline.synthetic_benchmark(Config())
    st = {k: res.stats[k] for k in ("NN train", "NN test", "MLP train", "MLP test")}
    report.append(f"synthetic benchmark: {res.n_features} training features, {res.n_filtered} after filtering")
    report.extend(_table(st))
    nn_train, nn_test, mlp_test = (100 * st[k]["mean"] for k in ("NN train", "NN test", "MLP test"))
    assert nn_train <= 10.0
    assert nn_test <= 25.0
    assert mlp_test <= nn_test + 10.0
    assert nn_train < nn_test
    assert nn_test <= mlp_test, f"NN test {nn_test:.2f} % > MLP test {mlp_test:.2f} %"


@pytest.mark.criterion(11, "tracking stability on a translating sequence")
def test_c11_tracking_stability(report):
    shift, n = 2, 10
    cfg = Config()
    with Timer(60.0):
        sets = []
        for i in range(6):
            img, lab = render(random_spec(derive_seed(cfg.seed, "track-train", i)))
            sets.append(pipeline.extract_labelled(GrayImage(img), lab, cfg))
        clf = pipeline.train(TrainingSet.merge(sets), cfg).classifier
        big, _ = render(random_spec(derive_seed(cfg.seed, "track-scene"), 256 + shift * (n - 1), 256))
        tracker = pipeline.Tracker(clf, cfg)
        frames = [tracker.step(GrayImage(big[:, k * shift:k * shift + 256])) for k in range(n)]
    matched, disagree = [], []
    for a, b in zip(frames, frames[1:]):
        matched.append(len(b.matches) / len(a.features))
        # the scene moves left by `shift` pixels: compare the overlap
        disagree.append(np.mean(a.seg.classes[:, shift:] != b.seg.classes[:, :-shift]))
    report.append(f"tracking: matched {min(matched):.3f}..{max(matched):.3f}, "
                  f"disagreement {min(disagree):.4f}..{max(disagree):.4f}")
    assert min(matched) >= 0.8
    assert max(disagree) <= 0.10
