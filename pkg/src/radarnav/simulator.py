"""Synthetic desk-scale datasets and independent brute-force oracles.

Scenes are point landmarks plus wall segments.  Scans are rendered per
azimuth from the pose at that azimuth's timestamp, so platform motion
produces genuine skew.  Also houses the slow reference implementations
(dense-grid truncated-least-squares solver, exhaustive clique search)
that the fast solvers are checked against.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Pose, TimedPoseBuffer, exp_so3, log_so3, skew
from .eskf import ImuSample
from .frontend import PolarScan
from .registration import (
    CompatibilityGraph,
    ScalarTlsProblem,
    ScalarTlsSolution,
    consensus_halfwidths,
)


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------


def oracle_scalar_tls(
    problem: ScalarTlsProblem, printed_boundaries: bool = False
) -> ScalarTlsSolution:
    """Brute-force global minimum of a sum of truncated scalar quadratics.

    Dense grid (step 1e-4) over the boundary hull plus the exact minimizer
    of every boundary-delimited interval.  Only for small instances.
    """
    x = problem.measurements
    var = problem.variances
    cbar2 = problem.cbar2
    M = x.size
    if M > 50:
        raise ValueError("oracle limited to M <= 50")
    h = consensus_halfwidths(problem, printed_boundaries)
    lo, hi = x - h, x + h

    def cost(val: float) -> float:
        return float(np.sum(np.minimum((val - x) ** 2 / var, cbar2)))

    def cost_many(vals: np.ndarray) -> np.ndarray:
        return np.minimum((vals[:, None] - x[None, :]) ** 2 / var[None, :], cbar2).sum(axis=1)

    bounds = np.sort(np.concatenate([lo, hi]))
    candidates = list(np.arange(bounds[0], bounds[-1], 1e-4)) + list(bounds)
    for a, b in zip(bounds[:-1], bounds[1:]):
        active = [m for m in range(M) if lo[m] <= a and b <= hi[m]]
        if not active:
            continue
        wsum = sum(1.0 / var[m] for m in active)
        wmean = sum(x[m] / var[m] for m in active) / wsum
        candidates.append(min(max(wmean, a), b))

    candidates = np.asarray(candidates, dtype=float)
    costs = cost_many(candidates)
    best_cost = costs.min()
    ties = np.flatnonzero(np.abs(costs - best_cost) <= 1e-15)
    best_x = float(candidates[ties].min())

    # refine: the winner's interval and active set, replayed exactly
    idx = int(np.searchsorted(bounds, best_x, side="right")) - 1
    idx = min(max(idx, 0), len(bounds) - 2)
    a, b = bounds[idx], bounds[idx + 1]
    active = [m for m in range(M) if lo[m] <= a and b <= hi[m]]
    if active:
        wsum = sum(1.0 / var[m] for m in active)
        wmean = sum(x[m] / var[m] for m in active) / wsum
        best_x = float(min(max(wmean, a), b))
        best_cost = cost(best_x)
    inliers = np.array(active, dtype=int)
    return ScalarTlsSolution(
        x_hat=best_x,
        var_x_hat=1.0 / float(np.sum(1.0 / var[inliers])),
        inliers=inliers,
        cost=best_cost,
    )


def oracle_max_clique(graph: CompatibilityGraph) -> list[int]:
    """Exhaustive maximum clique for graphs with at most 15 nodes."""
    n = graph.n
    if n > 15:
        raise ValueError("exhaustive oracle limited to |V| <= 15")
    adj = graph.adjacency
    best: list[int] = []
    for mask in range(1, 1 << n):
        nodes = [i for i in range(n) if (mask >> i) & 1]
        if len(nodes) < len(best):
            continue
        ok = all(
            (adj[nodes[i]] >> nodes[j]) & 1
            for i in range(len(nodes))
            for j in range(i + 1, len(nodes))
        )
        if ok and (len(nodes) > len(best) or (len(nodes) == len(best) and nodes < best)):
            best = nodes
    return best


# ---------------------------------------------------------------------------
# Scenario
# ---------------------------------------------------------------------------


@dataclass
class RadarSpec:
    azimuth_count: int = 400
    range_bins: int = 256
    range_resolution: float = 0.25  # meters/bin
    rpm: float = 240.0              # 4 Hz revolutions
    noise_floor: float = 2.0        # std of additive intensity noise
    peak_intensity: float = 200.0
    pulse_sigma_bins: float = 1.0
    doppler_beta: float = 0.0       # s; 0 disables the Doppler range shift

    @property
    def period_ns(self) -> int:
        return int(round(60.0 / self.rpm * 1e9))


@dataclass
class ImuSpec:
    rate_hz: float = 100.0
    sigma_gyro: float = 0.0         # rad/s white noise (per sample)
    sigma_accel: float = 0.0        # m/s^2 white noise (per sample)
    gyro_bias_walk: float = 0.0     # rad/s per sqrt(s)
    accel_bias_walk: float = 0.0    # m/s^2 per sqrt(s)


@dataclass
class Trajectory:
    """Analytic planar trajectory: line, circle, or piecewise-twist path."""

    kind: str = "line"              # "line" | "circle"
    speed: float = 5.0              # m/s along the path
    radius: float = 30.0            # circle radius (m)
    yaw_rate: float = 0.0           # line-mode additional yaw rate (rad/s)
    start_xy: tuple[float, float] = (0.0, 0.0)
    start_yaw: float = 0.0

    def pose(self, t: float) -> Pose:
        if self.kind == "circle":
            w = self.speed / self.radius
            a = self.start_yaw + w * t
            cx = self.start_xy[0] - self.radius * np.sin(self.start_yaw)
            cy = self.start_xy[1] + self.radius * np.cos(self.start_yaw)
            x = cx + self.radius * np.sin(a)
            y = cy - self.radius * np.cos(a)
            return Pose.from_planar(a, x, y)
        yaw = self.start_yaw + self.yaw_rate * t
        if abs(self.yaw_rate) < 1e-12:
            x = self.start_xy[0] + self.speed * t * np.cos(self.start_yaw)
            y = self.start_xy[1] + self.speed * t * np.sin(self.start_yaw)
        else:
            # constant-twist arc
            w = self.yaw_rate
            x = self.start_xy[0] + self.speed / w * (np.sin(yaw) - np.sin(self.start_yaw))
            y = self.start_xy[1] - self.speed / w * (np.cos(yaw) - np.cos(self.start_yaw))
        return Pose.from_planar(yaw, x, y)

    def velocity(self, t: float) -> np.ndarray:
        """World-frame planar velocity."""
        if self.kind == "circle":
            w = self.speed / self.radius
            a = self.start_yaw + w * t
            return np.array([self.speed * np.cos(a), self.speed * np.sin(a), 0.0])
        yaw = self.start_yaw + self.yaw_rate * t
        return np.array([self.speed * np.cos(yaw), self.speed * np.sin(yaw), 0.0])

    def body_rates(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Body angular velocity and world acceleration at time t."""
        if self.kind == "circle":
            w = self.speed / self.radius
            a = self.start_yaw + w * t
            acc = np.array([-self.speed * w * np.sin(a), self.speed * w * np.cos(a), 0.0])
            return np.array([0.0, 0.0, w]), acc
        w = self.yaw_rate
        yaw = self.start_yaw + w * t
        acc = np.array([-self.speed * w * np.sin(yaw), self.speed * w * np.cos(yaw), 0.0])
        return np.array([0.0, 0.0, w]), acc


@dataclass
class Scenario:
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    walls: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))  # x1 y1 x2 y2
    trajectory: Trajectory = field(default_factory=Trajectory)
    radar: RadarSpec = field(default_factory=RadarSpec)
    imu: ImuSpec = field(default_factory=ImuSpec)
    duration: float = 10.0
    outlier_rate: float = 0.0       # matcher-bypass outlier injection
    seed: int = 0

    def pose_fn(self):
        return self.trajectory.pose


GRAVITY = np.array([0.0, 0.0, -9.81])


# ---------------------------------------------------------------------------
# Scan rendering
# ---------------------------------------------------------------------------


def _ray_ranges(origin: np.ndarray, direction: np.ndarray, scenario: Scenario,
                max_range: float, ang_halfwidth: float) -> list[float]:
    """True ranges of scene returns along one ray."""
    hits = []
    pts = scenario.points
    if pts.shape[0]:
        rel = pts - origin[None, :]
        rho = np.linalg.norm(rel, axis=1)
        with np.errstate(invalid="ignore"):
            bearing = np.arctan2(rel[:, 1], rel[:, 0])
        ray_bearing = np.arctan2(direction[1], direction[0])
        diff = np.abs((bearing - ray_bearing + np.pi) % (2 * np.pi) - np.pi)
        for r in rho[(diff <= ang_halfwidth) & (rho > 0.0) & (rho <= max_range)]:
            hits.append(float(r))
    for x1, y1, x2, y2 in scenario.walls:
        # ray origin + t*d vs segment a + s*(b-a)
        ax, ay = x1 - origin[0], y1 - origin[1]
        ex, ey = x2 - x1, y2 - y1
        denom = direction[0] * ey - direction[1] * ex
        if abs(denom) < 1e-12:
            continue
        t = (ax * ey - ay * ex) / denom
        s = (ax * direction[1] - ay * direction[0]) / -denom
        if t > 0.0 and 0.0 <= s <= 1.0 and t <= max_range:
            hits.append(float(t))
    return hits


def render_scan(
    scenario: Scenario,
    pose_fn,
    t0_ns: int,
    rng: np.random.Generator | None = None,
    velocity_fn=None,
) -> PolarScan:
    """Render one radar revolution starting at t0_ns.

    Each azimuth ray is cast from pose_fn at that azimuth's timestamp;
    returns become Gaussian intensity bumps at their true range plus the
    configured noise floor.  A nonzero doppler_beta shifts ranges by
    beta * radial velocity (velocity_fn gives world velocity at t seconds).
    """
    spec = scenario.radar
    A, Rb = spec.azimuth_count, spec.range_bins
    res = spec.range_resolution
    max_range = Rb * res
    dt_ns = spec.period_ns / A
    timestamps = (t0_ns + np.round(np.arange(A) * dt_ns)).astype(np.int64)
    intensities = np.zeros((A, Rb))
    bins = np.arange(Rb)
    ang_halfwidth = np.pi / A

    for a in range(A):
        t = timestamps[a] * 1e-9
        pose = pose_fn(t)
        phi = 2.0 * np.pi * a / A
        d_sensor = np.array([np.cos(phi), np.sin(phi), 0.0])
        d_world = pose.rotation @ d_sensor
        origin = pose.translation[:2]
        ranges = _ray_ranges(origin, d_world[:2], scenario, max_range, ang_halfwidth)
        if spec.doppler_beta != 0.0 and velocity_fn is not None:
            v = velocity_fn(t)[:2]
            v_r = float(v @ d_world[:2])
            ranges = [r + spec.doppler_beta * v_r for r in ranges]
        for r in ranges:
            center = r / res - 0.5
            bump = spec.peak_intensity * np.exp(
                -((bins - center) ** 2) / (2.0 * spec.pulse_sigma_bins**2)
            )
            intensities[a] = np.maximum(intensities[a], bump)

    if spec.noise_floor > 0.0 and rng is not None:
        intensities += rng.normal(0.0, spec.noise_floor, size=intensities.shape)
    intensities = np.clip(intensities, 0.0, 255.0).astype(np.uint8)
    return PolarScan(
        range_resolution=res,
        azimuth_timestamps=timestamps,
        intensities=intensities,
    )


# ---------------------------------------------------------------------------
# IMU rendering
# ---------------------------------------------------------------------------


def render_imu(
    scenario: Scenario,
    t0_ns: int = 0,
    duration: float | None = None,
    rng: np.random.Generator | None = None,
) -> list[ImuSample]:
    """Exact analytic IMU stream for the scenario trajectory.

    Samples represent the interval average (evaluated at the interval
    midpoint), so discrete Euler integration of the nominal kinematics
    reproduces the analytic trajectory to high order.  Bias random walk
    and white noise are added per the IMU spec when an rng is supplied.
    """
    traj = scenario.trajectory
    spec = scenario.imu
    duration = scenario.duration if duration is None else duration
    dt = 1.0 / spec.rate_hz
    n = int(round(duration / dt))
    samples = []
    bg = np.zeros(3)
    ba = np.zeros(3)
    for k in range(n):
        t_mid = (k + 0.5) * dt
        omega, acc_world = traj.body_rates(t_mid)
        R = traj.pose(t_mid).rotation
        accel = R.T @ (acc_world - GRAVITY)
        if rng is not None:
            bg = bg + rng.normal(0.0, spec.gyro_bias_walk * np.sqrt(dt), 3)
            ba = ba + rng.normal(0.0, spec.accel_bias_walk * np.sqrt(dt), 3)
            omega = omega + bg + rng.normal(0.0, spec.sigma_gyro, 3)
            accel = accel + ba + rng.normal(0.0, spec.sigma_accel, 3)
        t_ns = t0_ns + int(round((k + 1) * dt * 1e9))
        samples.append(ImuSample(t=t_ns, omega=omega, accel=accel))
    return samples


# ---------------------------------------------------------------------------
# Synthetic correspondence sets (matcher bypass)
# ---------------------------------------------------------------------------


def make_correspondences(
    n: int,
    theta: float,
    t_xy,
    noise_sigma: float,
    outlier_rate: float,
    rng: np.random.Generator,
    extent: float = 50.0,
):
    """Matched point-pair instance with known transform and injected outliers.

    Returns (p_xy, q_xy, cov_p, cov_q, inlier_mask); covariances are the
    isotropic noise actually used.
    """
    from .geometry import rot2

    p = rng.uniform(-extent, extent, size=(n, 2))
    R = rot2(theta)
    q = p @ R.T + np.asarray(t_xy, dtype=float)
    q += rng.normal(0.0, noise_sigma, size=q.shape)
    inlier = rng.uniform(size=n) >= outlier_rate
    n_out = int(np.sum(~inlier))
    q[~inlier] = rng.uniform(-extent, extent, size=(n_out, 2))
    sigma2 = max(noise_sigma, 1e-3) ** 2
    cov = np.tile(np.eye(2) * sigma2, (n, 1, 1))
    return p, q, cov.copy(), cov.copy(), inlier


# ---------------------------------------------------------------------------
# Dataset generation and the scenario file format
# ---------------------------------------------------------------------------


def generate_dataset(scenario: Scenario, out_dir) -> None:
    """Write the directory layout the pipeline consumes.

    scans/ of RSCN files, imu.csv, calib.txt (identity extrinsic), and
    gt_traj.csv with the analytic poses at each scan-end time.
    """
    from .frontend import write_scan
    from .geometry import quat_from_rot

    out = Path(out_dir)
    (out / "scans").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(scenario.seed)
    scan_rng = np.random.default_rng(rng.integers(2**63))
    imu_rng = np.random.default_rng(rng.integers(2**63))

    period_ns = scenario.radar.period_ns
    n_scans = int(scenario.duration * 1e9 // period_ns)
    pose_fn = scenario.pose_fn()
    vel_fn = scenario.trajectory.velocity

    gt_rows = []
    for k in range(n_scans):
        t0 = k * period_ns
        scan = render_scan(scenario, pose_fn, t0, rng=scan_rng, velocity_fn=vel_fn)
        write_scan(out / "scans" / f"{k:06d}.rscn", scan)
        t_end = scan.azimuth_timestamps[-1]
        pose = pose_fn(t_end * 1e-9)
        q = quat_from_rot(pose.rotation)
        gt_rows.append(
            [t_end, *pose.translation, *q]
        )

    imu_noisy = scenario.imu.sigma_gyro > 0 or scenario.imu.sigma_accel > 0 \
        or scenario.imu.gyro_bias_walk > 0 or scenario.imu.accel_bias_walk > 0
    samples = render_imu(scenario, rng=imu_rng if imu_noisy else None)
    with open(out / "imu.csv", "w") as f:
        f.write("t_ns,gx,gy,gz,ax,ay,az\n")
        for s in samples:
            f.write(
                f"{s.t},{s.omega[0]:.12g},{s.omega[1]:.12g},{s.omega[2]:.12g},"
                f"{s.accel[0]:.12g},{s.accel[1]:.12g},{s.accel[2]:.12g}\n"
            )
    with open(out / "calib.txt", "w") as f:
        f.write("0 0 0 0 0 0 1\n")
    with open(out / "gt_traj.csv", "w") as f:
        f.write("t_ns,x,y,z,qx,qy,qz,qw\n")
        for row in gt_rows:
            f.write(",".join(f"{v:.12g}" if isinstance(v, float) else str(v) for v in row) + "\n")


def load_scenario(path) -> Scenario:
    """Parse a plain-text scenario file.

    key=value lines set scalar fields (dotted names reach the radar/imu/
    trajectory sub-specs); ``point x y`` and ``wall x1 y1 x2 y2`` lines
    add landmarks.
    """
    points, walls = [], []
    sc = Scenario()
    with open(path) as f:
        for raw in f:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("point "):
                points.append([float(v) for v in line.split()[1:3]])
                continue
            if line.startswith("wall "):
                walls.append([float(v) for v in line.split()[1:5]])
                continue
            if "=" not in line:
                raise ValueError(f"unrecognized scenario line: {raw.strip()}")
            key, value = (s.strip() for s in line.split("=", 1))
            _set_scenario_key(sc, key, value)
    if points:
        sc.points = np.asarray(points, dtype=float)
    if walls:
        sc.walls = np.asarray(walls, dtype=float)
    return sc


def _set_scenario_key(sc: Scenario, key: str, value: str) -> None:
    target = sc
    parts = key.split(".")
    for p in parts[:-1]:
        if not hasattr(target, p):
            raise ValueError(f"unknown scenario key: {key}")
        target = getattr(target, p)
    name = parts[-1]
    if not dataclasses.is_dataclass(target) or name not in {
        f.name for f in dataclasses.fields(target)
    }:
        raise ValueError(f"unknown scenario key: {key}")
    current = getattr(target, name)
    if isinstance(current, bool):
        parsed = value.lower() in ("1", "true", "yes")
    elif isinstance(current, int):
        parsed = int(value)
    elif isinstance(current, float):
        parsed = float(value)
    elif isinstance(current, str):
        parsed = value
    elif isinstance(current, tuple):
        parsed = tuple(float(v) for v in value.split())
    else:
        raise ValueError(f"scenario key {key} is not settable from text")
    setattr(target, name, parsed)
