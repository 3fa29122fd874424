"""Error-state Kalman filter for IMU propagation with radar pose updates.

The nominal state (position, velocity, attitude, biases, gravity) is
integrated directly from IMU samples; an 18-dimensional error state
carries the covariance.  Radar pose observations arrive as planar
(x, y, yaw) estimates with per-component variances and are lifted to the
6-D position/attitude observation used by the update.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, exp_so3, log_so3, skew, wrap_angle, yaw_of
from .registration import PoseObservation

MAX_DT = 0.1
PLANAR_PSEUDO_VAR = 1e-6

# error-state block offsets
_P, _V, _TH, _BG, _BA, _G = 0, 3, 6, 9, 12, 15


@dataclass
class ImuSample:
    t: int            # ns
    omega: np.ndarray  # rad/s, body frame
    accel: np.ndarray  # m/s^2, specific force in body frame


@dataclass
class NoiseConfig:
    sigma_accel: float = 0.02      # m/s^2, white (per sample)
    sigma_gyro: float = 0.002      # rad/s, white (per sample)
    sigma_accel_bias: float = 1e-4  # m/s^2 / sqrt(s) random walk
    sigma_gyro_bias: float = 1e-5   # rad/s / sqrt(s) random walk
    init_pos: float = 1e-4
    init_vel: float = 1e-4
    init_att: float = 1e-4
    init_bg: float = 1e-6
    init_ba: float = 1e-4
    init_g: float = 1e-6

    def initial_covariance(self) -> np.ndarray:
        d = np.concatenate(
            [
                np.full(3, self.init_pos),
                np.full(3, self.init_vel),
                np.full(3, self.init_att),
                np.full(3, self.init_bg),
                np.full(3, self.init_ba),
                np.full(3, self.init_g),
            ]
        )
        return np.diag(d)


@dataclass
class NominalState:
    p: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    b_g: np.ndarray = field(default_factory=lambda: np.zeros(3))
    b_a: np.ndarray = field(default_factory=lambda: np.zeros(3))
    g: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))

    def pose(self) -> Pose:
        return Pose(self.R.copy(), self.p.copy())

    def copy(self) -> "NominalState":
        return NominalState(
            self.p.copy(), self.v.copy(), self.R.copy(),
            self.b_g.copy(), self.b_a.copy(), self.g.copy(),
        )


class ErrorStateKalmanFilter:
    """Single-owner mutable filter; process samples in timestamp order."""

    def __init__(self, noise: NoiseConfig | None = None):
        self.noise = noise or NoiseConfig()
        self.state = NominalState()
        self.delta = np.zeros(18)
        self.P = self.noise.initial_covariance()
        self.t_ns: int | None = None
        self.rejected_samples = 0
        self.skipped_updates = 0

    # -- initialization -----------------------------------------------------

    def initialize_gravity(self, stationary_accels: np.ndarray) -> None:
        """Set gravity from averaged stationary accelerometer samples.

        g = -R @ mean(a); with the platform level and yaw-aligned at start
        this recovers (0, 0, -|g|).
        """
        a_bar = np.mean(np.asarray(stationary_accels, dtype=float), axis=0)
        g = -self.state.R @ a_bar
        norm = np.linalg.norm(g)
        if not 9.0 <= norm <= 10.5:
            raise ValueError(f"implausible gravity magnitude {norm:.3f} m/s^2")
        self.state.g = g

    # -- prediction ---------------------------------------------------------

    def predict(self, sample: ImuSample, dt: float) -> None:
        """Propagate nominal state and error covariance by one IMU sample.

        Samples with dt outside (0, MAX_DT] are rejected and counted.
        """
        if not 0.0 < dt <= MAX_DT:
            self.rejected_samples += 1
            return
        s = self.state
        a = sample.accel - s.b_a
        w = sample.omega - s.b_g
        Ra = s.R @ a

        s.p = s.p + s.v * dt + 0.5 * Ra * dt * dt + 0.5 * s.g * dt * dt
        s.v = s.v + Ra * dt + s.g * dt
        s.R = s.R @ exp_so3(w * dt)

        A = np.eye(18)
        A[_P:_P + 3, _V:_V + 3] = np.eye(3) * dt
        A[_V:_V + 3, _TH:_TH + 3] = -s.R @ skew(a) * dt
        A[_V:_V + 3, _BA:_BA + 3] = -s.R * dt
        A[_V:_V + 3, _G:_G + 3] = np.eye(3) * dt
        A[_TH:_TH + 3, _TH:_TH + 3] = exp_so3(-w * dt)
        A[_TH:_TH + 3, _BG:_BG + 3] = -np.eye(3) * dt

        n = self.noise
        B = np.zeros(18)
        B[_V:_V + 3] = (n.sigma_accel * dt) ** 2
        B[_TH:_TH + 3] = (n.sigma_gyro * dt) ** 2
        B[_BG:_BG + 3] = n.sigma_gyro_bias**2 * dt
        B[_BA:_BA + 3] = n.sigma_accel_bias**2 * dt

        self.delta = A @ self.delta
        P = A @ self.P @ A.T + np.diag(B)
        self.P = 0.5 * (P + P.T)
        self.t_ns = sample.t

    # -- update -------------------------------------------------------------

    def lift_observation(self, obs: PoseObservation, world_xy, world_yaw: float):
        """Embed a planar radar pose observation as a 6-D error observation.

        world_xy / world_yaw: the observed pose in the world frame.
        Returns (delta_z, D).  Pseudo-observations pin z, roll, and pitch
        with variance PLANAR_PSEUDO_VAR.
        """
        variances = np.array([*obs.var_t, obs.var_theta], dtype=float)
        if not np.all(np.isfinite(variances)) or np.any(variances <= 0.0):
            raise ValueError("non-finite or non-positive observation variance")
        s = self.state
        R_obs = exp_so3([0.0, 0.0, world_yaw])
        e_rot = log_so3(s.R.T @ R_obs)
        delta_z = np.array(
            [
                world_xy[0] - s.p[0],
                world_xy[1] - s.p[1],
                0.0,
                0.0,
                0.0,
                e_rot[2],
            ]
        )
        D = np.diag(
            [
                obs.var_t[0],
                obs.var_t[1],
                PLANAR_PSEUDO_VAR,
                PLANAR_PSEUDO_VAR,
                PLANAR_PSEUDO_VAR,
                obs.var_theta,
            ]
        )
        return delta_z, D

    @staticmethod
    def observation_matrix() -> np.ndarray:
        C = np.zeros((6, 18))
        C[0:3, _P:_P + 3] = np.eye(3)
        C[3:6, _TH:_TH + 3] = np.eye(3)
        return C

    def update(self, delta_z: np.ndarray, D: np.ndarray) -> bool:
        """Kalman update with the sparse position/attitude observation.

        Joseph-form covariance for numerical robustness.  Returns False
        (and leaves the state untouched) if the innovation covariance is
        not invertible.
        """
        C = self.observation_matrix()
        S = C @ self.P @ C.T + D
        try:
            S_inv = np.linalg.inv(S)
        except np.linalg.LinAlgError:
            self.skipped_updates += 1
            return False
        K = self.P @ C.T @ S_inv
        self.delta = self.delta + K @ (delta_z - C @ self.delta)
        IKC = np.eye(18) - K @ C
        P = IKC @ self.P @ IKC.T + K @ D @ K.T
        self.P = 0.5 * (P + P.T)
        return True

    # -- injection / reset --------------------------------------------------

    def inject_and_reset(self) -> None:
        """Fold the error estimate into the nominal state and zero it."""
        d = self.delta
        s = self.state
        s.p = s.p + d[_P:_P + 3]
        s.v = s.v + d[_V:_V + 3]
        dtheta = d[_TH:_TH + 3]
        s.R = s.R @ exp_so3(dtheta)
        s.b_g = s.b_g + d[_BG:_BG + 3]
        s.b_a = s.b_a + d[_BA:_BA + 3]
        s.g = s.g + d[_G:_G + 3]

        J = np.eye(18)
        J[_TH:_TH + 3, _TH:_TH + 3] = np.eye(3) - 0.5 * skew(dtheta)
        P = J @ self.P @ J.T
        self.P = 0.5 * (P + P.T)
        self.delta = np.zeros(18)

    # -- convenience --------------------------------------------------------

    @property
    def yaw(self) -> float:
        return yaw_of(self.state.R)

    def process_to(self, samples, t_target_ns: int, start_index: int = 0) -> int:
        """Integrate samples with t <= t_target_ns; returns the next index.

        Each sample is integrated at its native dt; a final fractional step
        is not synthesized (callers hand in samples at the rate they need).
        """
        i = start_index
        while i < len(samples) and samples[i].t <= t_target_ns:
            sample = samples[i]
            if self.t_ns is None:
                self.t_ns = sample.t
                i += 1
                continue
            dt = (sample.t - self.t_ns) * 1e-9
            self.predict(sample, dt)
            i += 1
        return i
