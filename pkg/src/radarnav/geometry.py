"""Minimal rotation / pose math shared by all modules.

Rotations are plain 3x3 numpy arrays, poses are light immutable wrappers.
Planar (2-D) angles are always normalized to (-pi, pi].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def wrap_angle(theta: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    t = float(theta) % (2.0 * np.pi)
    if t > np.pi:
        t -= 2.0 * np.pi
    return t


def ang(v) -> float:
    """Argument (angle) of a 2-vector, in (-pi, pi].

    Raises ValueError on the zero vector.
    """
    v = np.asarray(v, dtype=float)
    n = np.hypot(v[0], v[1])
    if n == 0.0:
        raise ValueError("angle of the zero vector is undefined")
    a = float(np.arctan2(v[1], v[0]))
    # arctan2 returns -pi for (-x, -0.0); fold onto the canonical branch
    if a <= -np.pi:
        a = np.pi
    return a


def rot2(theta: float) -> np.ndarray:
    """2x2 rotation matrix for a planar angle."""
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def skew(v) -> np.ndarray:
    """Skew-symmetric matrix such that skew(v) @ u == cross(v, u)."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def exp_so3(omega) -> np.ndarray:
    """Rodrigues map from a rotation vector to a 3x3 rotation matrix."""
    omega = np.asarray(omega, dtype=float)
    theta = np.linalg.norm(omega)
    if theta < 1e-12:
        # second-order expansion keeps exp/log round trips tight near zero
        W = skew(omega)
        return np.eye(3) + W + 0.5 * (W @ W)
    axis = omega / theta
    W = skew(axis)
    return np.eye(3) + np.sin(theta) * W + (1.0 - np.cos(theta)) * (W @ W)


def log_so3(R) -> np.ndarray:
    """Rotation vector of a rotation matrix (inverse of exp_so3 for angle < pi)."""
    R = np.asarray(R, dtype=float)
    cos_theta = np.clip((np.trace(R) - 1.0) * 0.5, -1.0, 1.0)
    theta = np.arccos(cos_theta)
    if theta < 1e-7:
        return np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]) * 0.5
    if np.pi - theta < 1e-6:
        # angle near pi: axis from the dominant column of R + I
        S = R + np.eye(3)
        k = int(np.argmax(np.diag(S)))
        axis = S[:, k] / np.linalg.norm(S[:, k])
        # fix sign so that exp reproduces R
        v = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
        if np.dot(axis, v) < 0.0:
            axis = -axis
        return axis * theta
    v = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return v * (theta / (2.0 * np.sin(theta)))


def yaw_of(R) -> float:
    """Yaw (z) angle of a rotation matrix, in (-pi, pi]."""
    return ang(np.asarray(R)[:2, 0])


def quat_from_rot(R) -> np.ndarray:
    """Unit quaternion (qx, qy, qz, qw) of a rotation matrix."""
    R = np.asarray(R, dtype=float)
    t = np.trace(R)
    if t > 0.0:
        s = np.sqrt(t + 1.0) * 2.0
        qw = 0.25 * s
        qx = (R[2, 1] - R[1, 2]) / s
        qy = (R[0, 2] - R[2, 0]) / s
        qz = (R[1, 0] - R[0, 1]) / s
    else:
        k = int(np.argmax(np.diag(R)))
        i, j = (k + 1) % 3, (k + 2) % 3
        s = np.sqrt(R[k, k] - R[i, i] - R[j, j] + 1.0) * 2.0
        q = np.empty(3)
        q[k] = 0.25 * s
        q[i] = (R[i, k] + R[k, i]) / s
        q[j] = (R[j, k] + R[k, j]) / s
        qw = (R[j, i] - R[i, j]) / s
        qx, qy, qz = q
    q = np.array([qx, qy, qz, qw])
    return q / np.linalg.norm(q)


def rot_from_quat(q) -> np.ndarray:
    """Rotation matrix from a unit quaternion (qx, qy, qz, qw)."""
    x, y, z, w = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


@dataclass(frozen=True)
class Pose:
    """Rigid transform: rotation (3x3) and translation (3-vector)."""

    rotation: np.ndarray
    translation: np.ndarray

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    @staticmethod
    def from_planar(theta: float, x: float, y: float) -> "Pose":
        return Pose(exp_so3([0.0, 0.0, theta]), np.array([x, y, 0.0]))

    def compose(self, other: "Pose") -> "Pose":
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def apply(self, point) -> np.ndarray:
        return self.rotation @ np.asarray(point, dtype=float) + self.translation

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    @property
    def yaw(self) -> float:
        return yaw_of(self.rotation)


class TimedPoseBuffer:
    """Ordered sequence of (timestamp_ns, Pose) supporting interpolation.

    Timestamps must be strictly increasing.
    """

    def __init__(self):
        self._times: list[int] = []
        self._poses: list[Pose] = []

    def __len__(self) -> int:
        return len(self._times)

    @property
    def times(self) -> list[int]:
        return list(self._times)

    @property
    def t_first(self) -> int:
        return self._times[0]

    @property
    def t_last(self) -> int:
        return self._times[-1]

    def append(self, t_ns: int, pose: Pose) -> None:
        if self._times and t_ns <= self._times[-1]:
            raise ValueError(
                f"timestamps must be strictly increasing ({t_ns} after {self._times[-1]})"
            )
        self._times.append(int(t_ns))
        self._poses.append(pose)

    def covers(self, t_ns: int) -> bool:
        return bool(self._times) and self._times[0] <= t_ns <= self._times[-1]

    def interpolate(self, t_ns: int) -> Pose:
        """Pose at time t: linear in translation, geodesic in rotation.

        Raises ValueError if t falls outside the buffered span.
        """
        if not self.covers(t_ns):
            raise ValueError(f"time {t_ns} outside buffer span")
        times = self._times
        idx = int(np.searchsorted(times, t_ns))
        if idx < len(times) and times[idx] == t_ns:
            return self._poses[idx]
        lo, hi = idx - 1, idx
        t0, t1 = times[lo], times[hi]
        alpha = (t_ns - t0) / (t1 - t0)
        pa, pb = self._poses[lo], self._poses[hi]
        trans = (1.0 - alpha) * pa.translation + alpha * pb.translation
        dR = pa.rotation.T @ pb.rotation
        rot = pa.rotation @ exp_so3(alpha * log_so3(dR))
        return Pose(rot, trans)
