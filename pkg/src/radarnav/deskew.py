"""Within-scan motion compensation and Doppler range correction.

Keypoints captured at different azimuth times are mapped into the
scan-end radar frame using interpolated platform poses; Doppler
compensation removes the radial range bias proportional to the sensor's
radial velocity.  A rotation gate decides when motion compensation is
worth applying at all.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .frontend import Keypoint
from .geometry import Pose, TimedPoseBuffer, ang, rot2, yaw_of

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CompensationGate:
    """Rotation window (degrees) inside which motion compensation runs."""

    min_for_mc: float = 2.0
    max_for_mc: float = 9.0

    def __post_init__(self):
        if not 0.0 <= self.min_for_mc < self.max_for_mc:
            raise ValueError("require 0 <= min_for_mc < max_for_mc")


def should_compensate(predicted_rotation_deg: float, gate: CompensationGate) -> bool:
    """True iff the predicted scan rotation magnitude falls inside the gate."""
    return gate.min_for_mc <= predicted_rotation_deg <= gate.max_for_mc


def compensate_motion(
    kps: list[Keypoint], buffer: TimedPoseBuffer, t_ir: Pose
) -> list[Keypoint]:
    """Map keypoints into the scan-end radar frame via interpolated poses.

    The scan end is the latest keypoint timestamp.  For each keypoint at
    time tau: p' = T_IR^-1 T_end^-1 T_tau T_IR p, with the z component
    dropped afterwards (planar problem).  The covariance rotates by the
    applied planar rotation; timestamps are preserved.  Keypoints whose
    timestamp falls outside the buffer pass through unchanged (counted
    and logged, no failure).
    """
    if not kps:
        return []
    t_end = max(kp.t for kp in kps)
    try:
        pose_end = buffer.interpolate(t_end)
    except ValueError:
        log.warning("de-skew: buffer does not cover scan end; passthrough")
        return list(kps)
    t_ir_inv = t_ir.inverse()
    end_radar_inv = (pose_end.compose(t_ir)).inverse()

    out = []
    skipped = 0
    for kp in kps:
        try:
            pose_tau = buffer.interpolate(kp.t)
        except ValueError:
            skipped += 1
            out.append(kp)
            continue
        # radar@tau -> imu -> world -> imu@end -> radar@end
        transform = end_radar_inv.compose(pose_tau.compose(t_ir))
        p3 = transform.apply([kp.xy[0], kp.xy[1], 0.0])
        xy = p3[:2]
        rho = float(np.hypot(xy[0], xy[1]))
        phi = ang(xy) if rho > 0.0 else kp.phi
        dyaw = yaw_of(transform.rotation)
        Rp = rot2(dyaw)
        cov = Rp @ kp.cov @ Rp.T
        out.append(Keypoint(rho=rho, phi=phi, xy=xy, t=kp.t, cov=cov))
    if skipped:
        log.warning("de-skew: %d keypoints outside pose buffer passed through", skipped)
    return out


def compensate_doppler(
    kps: list[Keypoint], v_sensor: np.ndarray, beta: float
) -> list[Keypoint]:
    """Remove the Doppler range bias: rho' = rho - beta * (v . unit(phi)).

    v_sensor is the sensor's planar velocity in the sensor frame; beta in
    seconds.  beta = 0 is the identity.
    """
    if beta < 0.0:
        raise ValueError("beta must be non-negative")
    if beta == 0.0:
        return list(kps)
    v = np.asarray(v_sensor, dtype=float)[:2]
    out = []
    for kp in kps:
        u = np.array([np.cos(kp.phi), np.sin(kp.phi)])
        rho = kp.rho - beta * float(v @ u)
        xy = rho * u
        out.append(replace(kp, rho=rho, xy=xy))
    return out
