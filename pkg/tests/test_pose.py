import numpy as np
import pytest

from salientseg.geometry import camera_matrix
from salientseg.pose import (OrientationEKF, PoseFilter, PositionKF, make_psd, predict_pose, quat_exp,
                             quat_from_matrix, quat_left, quat_mul, quat_right, quat_to_matrix, update_pose)

import oracles


def _is_psd(P):
    return np.array_equal(P, P.T) and np.linalg.eigvalsh(P).min() >= -1e-9


def exact_kf_errors(n=20, dt=0.5):
    kf = PositionKF(accel_noise=0.0, meas_noise=0.0)
    p0, v = np.array([1.0, -2.0, 0.5]), np.array([0.3, 0.1, -0.2])
    kf.x[:3] = p0
    kf.update(p0)
    errs = []
    for k in range(1, n):
        want = p0 + v * k * dt
        errs.append(np.abs(kf.predict(dt) - want).max())
        kf.update(want)
    return errs


def ekf_closed_form_error(n=200, dt=0.01):
    axis, rate = np.array([0.0, 0.0, 1.0]), 0.7
    q0 = oracles.quat_axis_angle([1.0, 2.0, 0.5], 0.4)
    ekf = OrientationEKF(gyro_noise=0.0)
    ekf.x = np.r_[q0, rate * axis]
    worst = 0.0
    for k in range(1, n + 1):
        q = ekf.predict(dt)
        want = oracles.quat_mul(q0, oracles.quat_axis_angle(axis, rate * k * dt))
        worst = max(worst, np.abs(q - want).max())
    return worst


def test_quaternion_helpers():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a, b = rng.normal(size=4), rng.normal(size=4)
        np.testing.assert_allclose(quat_mul(a, b), oracles.quat_mul(a, b), atol=1e-14)
        np.testing.assert_allclose(quat_left(a) @ b, quat_mul(a, b), atol=1e-14)
        np.testing.assert_allclose(quat_right(b) @ a, quat_mul(a, b), atol=1e-14)
        v = rng.normal(size=3)
        theta = np.linalg.norm(v)
        np.testing.assert_allclose(quat_exp(v), oracles.quat_axis_angle(v, theta), atol=1e-14)
        R = oracles.rotation(v, theta)
        np.testing.assert_allclose(quat_to_matrix(quat_from_matrix(R)), R, atol=1e-12)
    assert np.linalg.norm(quat_exp(np.full(3, 1e-14))) == pytest.approx(1.0, abs=1e-15)


def test_kf_exact_under_zero_noise():
    errs = exact_kf_errors()
    assert max(errs[1:]) <= 1e-12  # the first prediction has no velocity estimate yet


def test_kf_rejects_bad_dt():
    with pytest.raises(ValueError):
        PositionKF().predict(0.0)
    with pytest.raises(ValueError):
        OrientationEKF().predict(-1.0)


def test_ekf_matches_closed_form():
    assert ekf_closed_form_error() <= 1e-6


def test_ekf_transition_jacobian():
    rng = np.random.default_rng(1)
    ekf = OrientationEKF(gyro_noise=0.0)
    ekf.x = np.r_[oracles.quat_axis_angle(rng.normal(size=3), 0.3), rng.normal(size=3) * 0.1]
    ekf.P = np.zeros((7, 7))
    ekf.P[4:, 4:] = np.eye(3)
    dt = 1e-3
    x0 = ekf.x.copy()
    ekf.predict(dt)
    # the q block of the covariance is driven by the omega sensitivity 0.5 dt L(q)
    J = 0.5 * dt * quat_left(x0[:4])[:, 1:]
    np.testing.assert_allclose(ekf.P[:4, :4], J @ J.T, rtol=1e-2, atol=1e-12)


def test_norm_and_psd_over_many_cycles():
    rng = np.random.default_rng(2)
    ekf, kf = OrientationEKF(), PositionKF()
    ekf.x[4:] = [0.1, -0.2, 0.3]
    for _ in range(1000):
        ekf.predict(0.1)
        assert abs(np.linalg.norm(ekf.q) - 1.0) <= 1e-12
        ekf.update(quat_exp(rng.normal(size=3)))
        assert abs(np.linalg.norm(ekf.q) - 1.0) <= 1e-12
        kf.predict(0.1)
        kf.update(rng.normal(size=3))
        assert _is_psd(ekf.P) and _is_psd(kf.P)


def test_make_psd_clips():
    P = make_psd(np.array([[1.0, 2.0], [2.0, 1.0]]))
    assert np.linalg.eigvalsh(P).min() >= -1e-15
    np.testing.assert_array_equal(P, P.T)


def test_update_sign_ambiguity():
    ekf = OrientationEKF()
    ekf.update(-np.array([1.0, 0.0, 0.0, 0.0]))
    assert ekf.q[0] > 0.99


def test_pose_filter_constant_motion():
    filt = PoseFilter(K=np.diag([300.0, 300.0, 1.0]))
    with pytest.raises(RuntimeError):
        filt.predict_pose(1.0)
    step = oracles.rotation([0.0, 1.0, 0.0], 0.02)
    Rc, centre = np.eye(3), np.zeros(3)
    errs = []
    for k in range(30):
        R = Rc.T
        t = -R @ centre
        if k:
            P, R_hat, t_hat = filt.predict_pose(1.0)
            errs.append(np.linalg.norm(-R_hat.T @ t_hat - centre))
            np.testing.assert_allclose(P, camera_matrix(filt.K, R_hat, t_hat))
        update_pose(filt, R, t)
        Rc, centre = Rc @ step, centre + np.array([0.05, 0.0, 0.01])
    assert errs[-1] < errs[1] and errs[-1] < 1e-3
    assert predict_pose(filt, 1.0).shape == (3, 4)
