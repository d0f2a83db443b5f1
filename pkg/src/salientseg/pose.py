"""Camera pose prediction: a constant-velocity Kalman filter for position and a
quaternion EKF (constant angular velocity) for orientation.

Quaternions are scalar-first ``[w, x, y, z]``.  The orientation state is the
camera-to-world rotation; angular velocity is expressed in the camera frame,
so ``q_next = q * exp(omega * dt / 2)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .geometry import camera_matrix


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_left(q: np.ndarray) -> np.ndarray:
    """Matrix L(q) with q * p = L(q) p."""
    w, x, y, z = q
    return np.array([[w, -x, -y, -z], [x, w, -z, y], [y, z, w, -x], [z, -y, x, w]])


def quat_right(p: np.ndarray) -> np.ndarray:
    """Matrix R(p) with q * p = R(p) q."""
    w, x, y, z = p
    return np.array([[w, -x, -y, -z], [x, w, z, -y], [y, -z, w, x], [z, y, -x, w]])


def quat_exp(rotvec: np.ndarray) -> np.ndarray:
    """Unit quaternion of a rotation vector."""
    theta = float(np.linalg.norm(rotvec))
    if theta < 1e-12:
        return np.array([1.0, *(0.5 * np.asarray(rotvec))]) / np.sqrt(1.0 + 0.25 * theta ** 2)
    axis = np.asarray(rotvec) / theta
    return np.array([np.cos(theta / 2), *(np.sin(theta / 2) * axis)])


def quat_from_matrix(R: np.ndarray) -> np.ndarray:
    x, y, z, w = Rotation.from_matrix(R).as_quat()
    q = np.array([w, x, y, z])
    return q if w >= 0 else -q


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return Rotation.from_quat([x, y, z, w]).as_matrix()


def make_psd(P: np.ndarray) -> np.ndarray:
    """Symmetrize and clip negative eigenvalues."""
    P = 0.5 * (P + P.T)
    evals, evecs = np.linalg.eigh(P)
    if evals.min() >= 0.0:
        return P
    P = (evecs * np.clip(evals, 0.0, None)) @ evecs.T
    return 0.5 * (P + P.T)


def _kalman_update(x, P, z, H, Rm):
    S = H @ P @ H.T + Rm
    K = P @ H.T @ np.linalg.pinv(S)
    x = x + K @ (z - H @ x)
    I_KH = np.eye(len(x)) - K @ H
    # Joseph form keeps P symmetric PSD
    P = I_KH @ P @ I_KH.T + K @ Rm @ K.T
    return x, make_psd(P)


@dataclass
class PositionKF:
    """State ``[x, y, z, vx, vy, vz]`` with white-acceleration process noise."""

    x: np.ndarray = field(default_factory=lambda: np.zeros(6))
    P: np.ndarray = field(default_factory=lambda: np.eye(6) * 1e3)
    accel_noise: float = 1e-2
    meas_noise: float = 1e-2

    def transition(self, dt: float) -> np.ndarray:
        F = np.eye(6)
        F[:3, 3:] = dt * np.eye(3)
        return F

    def process_noise(self, dt: float) -> np.ndarray:
        q = self.accel_noise
        blk = np.array([[dt ** 4 / 4, dt ** 3 / 2], [dt ** 3 / 2, dt ** 2]]) * q
        return np.kron(blk, np.eye(3))

    def predict(self, dt: float) -> np.ndarray:
        if dt <= 0:
            raise ValueError("dt must be positive")
        F = self.transition(dt)
        self.x = F @ self.x
        self.P = make_psd(F @ self.P @ F.T + self.process_noise(dt))
        return self.x[:3].copy()

    def update(self, position: np.ndarray) -> None:
        H = np.hstack([np.eye(3), np.zeros((3, 3))])
        self.x, self.P = _kalman_update(self.x, self.P, np.asarray(position, dtype=np.float64),
                                        H, self.meas_noise * np.eye(3))


@dataclass
class OrientationEKF:
    """State ``[qw, qx, qy, qz, wx, wy, wz]``; quaternion renormalized after every step."""

    x: np.ndarray = field(default_factory=lambda: np.r_[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
    P: np.ndarray = field(default_factory=lambda: np.diag([1e-2] * 4 + [1.0] * 3))
    gyro_noise: float = 1e-3
    meas_noise: float = 1e-4

    @property
    def q(self) -> np.ndarray:
        return self.x[:4]

    def _normalize(self) -> None:
        self.x[:4] /= np.linalg.norm(self.x[:4])

    def predict(self, dt: float) -> np.ndarray:
        if dt <= 0:
            raise ValueError("dt must be positive")
        q, w = self.x[:4], self.x[4:]
        dq = quat_exp(w * dt)
        F = np.eye(7)
        F[:4, :4] = quat_right(dq)
        # first-order sensitivity of q * exp(w dt / 2) to w
        F[:4, 4:] = 0.5 * dt * quat_left(q)[:, 1:]
        Q = np.zeros((7, 7))
        Q[4:, 4:] = self.gyro_noise * dt * np.eye(3)
        self.x = np.r_[quat_mul(q, dq), w]
        self._normalize()
        self.P = make_psd(F @ self.P @ F.T + Q)
        return self.q.copy()

    def update(self, q_meas: np.ndarray) -> None:
        z = np.asarray(q_meas, dtype=np.float64)
        if z @ self.q < 0:
            z = -z  # same rotation, nearer sign
        H = np.hstack([np.eye(4), np.zeros((4, 3))])
        self.x, self.P = _kalman_update(self.x, self.P, z, H, self.meas_noise * np.eye(4))
        self._normalize()


@dataclass
class PoseFilter:
    """Position KF plus orientation EKF for one camera.

    Measurements and predictions use world-to-camera ``(R, t)`` as in
    ``P = K [R | t]``; internally the filters track the camera centre and the
    camera-to-world rotation.
    """

    K: np.ndarray = field(default_factory=lambda: np.eye(3))
    position: PositionKF = field(default_factory=PositionKF)
    orientation: OrientationEKF = field(default_factory=OrientationEKF)
    initialized: bool = False

    def predict_pose(self, dt: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Advance both filters by ``dt``; returns (predicted PPM, R, t)."""
        if not self.initialized:
            raise RuntimeError("pose filter needs a first measurement")
        centre = self.position.predict(dt)
        Rc = quat_to_matrix(self.orientation.predict(dt))
        R = Rc.T
        t = -R @ centre
        return camera_matrix(self.K, R, t), R, t

    def update_pose(self, R: np.ndarray, t: np.ndarray) -> None:
        centre = -R.T @ np.asarray(t, dtype=np.float64)
        q = quat_from_matrix(R.T)
        if not self.initialized:
            self.position.x[:3] = centre
            self.orientation.x[:4] = q
            self.initialized = True
        self.position.update(centre)
        self.orientation.update(q)


def update_pose(filt: PoseFilter, R: np.ndarray, t: np.ndarray) -> None:
    filt.update_pose(R, t)


def predict_pose(filt: PoseFilter, dt: float) -> np.ndarray:
    return filt.predict_pose(dt)[0]
