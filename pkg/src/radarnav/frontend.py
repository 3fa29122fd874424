"""Polar radar scan parsing and keypoint extraction.

Extraction is row-wise (per azimuth): high-pass the intensity profile,
threshold against the row's own noise statistics, keep local-median
peaks, and emit one keypoint per surviving contiguous run at its
power-weighted centroid, with an anisotropic range/azimuth covariance.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import median_filter, uniform_filter1d

from .geometry import rot2

RSCN_MAGIC = b"RSCN"
RSCN_VERSION = 1


@dataclass(frozen=True)
class PolarScan:
    """One radar revolution: azimuth x range intensity tensor.

    Azimuth index a corresponds to sensor-frame angle 2*pi*a/A; each row
    carries its own capture timestamp (ns, strictly increasing).
    """

    range_resolution: float
    azimuth_timestamps: np.ndarray  # (A,) int64 ns
    intensities: np.ndarray         # (A, Rb) uint8

    def __post_init__(self):
        ts = np.asarray(self.azimuth_timestamps, dtype=np.int64)
        im = np.asarray(self.intensities, dtype=np.uint8)
        if im.ndim != 2 or im.shape[0] < 1 or im.shape[1] < 1:
            raise ValueError("intensities must be a non-empty A x Rb array")
        if ts.shape != (im.shape[0],):
            raise ValueError("one timestamp per azimuth row required")
        if np.any(np.diff(ts) <= 0):
            raise ValueError("azimuth timestamps must be strictly increasing")
        if self.range_resolution <= 0.0:
            raise ValueError("range_resolution must be positive")
        object.__setattr__(self, "azimuth_timestamps", ts)
        object.__setattr__(self, "intensities", im)

    @property
    def azimuth_count(self) -> int:
        return self.intensities.shape[0]

    @property
    def range_bin_count(self) -> int:
        return self.intensities.shape[1]

    @property
    def t_end(self) -> int:
        return int(self.azimuth_timestamps[-1])


@dataclass(frozen=True)
class Keypoint:
    """A detected radar return in the sensor frame at its detection time."""

    rho: float
    phi: float
    xy: np.ndarray        # (2,) Cartesian, meters
    t: int                # detection timestamp, ns
    cov: np.ndarray       # (2, 2) position covariance, meters^2


@dataclass(frozen=True)
class ExtractionParams:
    zw: float = 3.0          # z-score threshold on filtered power
    wf: int = 17             # median-filter width, odd bins
    max_range: float = 60.0  # keypoints beyond this are discarded
    highpass_factor: int = 4  # moving-average width = highpass_factor * wf

    def __post_init__(self):
        if self.wf < 3 or self.wf % 2 == 0:
            raise ValueError("wf must be odd and >= 3")
        if self.zw <= 0.0 or self.max_range <= 0.0:
            raise ValueError("zw and max_range must be positive")


def default_sigmas(scan: PolarScan) -> tuple[float, float]:
    """Half-cell noise model: sigma_rho = res/2, sigma_phi = (2*pi/A)/2."""
    return scan.range_resolution / 2.0, np.pi / scan.azimuth_count


def keypoint_covariance(
    rho: float, phi: float, sigma_rho: float, sigma_phi: float
) -> np.ndarray:
    """First-order range/azimuth noise propagation into Cartesian coordinates.

    In the radial/tangential frame the covariance is diag(sigma_rho^2,
    rho^2 sigma_phi^2); the result is that matrix rotated by phi.
    """
    if rho <= 0.0:
        raise ValueError("rho must be positive")
    if sigma_rho <= 0.0 or sigma_phi <= 0.0:
        raise ValueError("sigmas must be positive")
    R = rot2(phi)
    local = np.diag([sigma_rho**2, (rho * sigma_phi) ** 2])
    return R @ local @ R.T


def extract_keypoints(scan: PolarScan, params: ExtractionParams) -> list[Keypoint]:
    """Row-wise peak extraction from the polar scan.

    Per azimuth row: subtract a centered moving average (width
    highpass_factor * wf, clamping negatives to zero), keep bins whose
    filtered power exceeds the row mean + zw * stddev and the local
    median over wf bins, then emit one keypoint per contiguous run at
    its power-weighted centroid.  Keypoints beyond max_range are dropped.
    """
    raw = scan.intensities.astype(float)
    A, Rb = raw.shape
    res = scan.range_resolution
    sigma_rho, sigma_phi = default_sigmas(scan)

    width = params.highpass_factor * params.wf
    background = uniform_filter1d(raw, size=width, axis=1, mode="nearest")
    filtered = np.clip(raw - background, 0.0, None)

    row_mean = filtered.mean(axis=1, keepdims=True)
    row_std = filtered.std(axis=1, keepdims=True)
    local_median = median_filter(filtered, size=(1, params.wf), mode="nearest")
    mask = (filtered > row_mean + params.zw * row_std) & (filtered >= local_median) & (
        filtered > 0.0
    )

    keypoints: list[Keypoint] = []
    max_bin_upper = params.max_range / res
    for a in range(A):
        row_mask = mask[a]
        if not row_mask.any():
            continue
        phi = 2.0 * np.pi * a / A
        t = int(scan.azimuth_timestamps[a])
        # contiguous above-threshold runs
        edges = np.flatnonzero(np.diff(np.concatenate([[0], row_mask.view(np.int8), [0]])))
        power = filtered[a]
        for start, stop in zip(edges[::2], edges[1::2]):
            bins = np.arange(start, stop)
            weights = power[bins]
            centroid = float(np.sum(bins * weights) / np.sum(weights))
            rho = (centroid + 0.5) * res
            if rho > params.max_range or centroid + 0.5 > max_bin_upper:
                continue
            xy = np.array([rho * np.cos(phi), rho * np.sin(phi)])
            cov = keypoint_covariance(rho, phi, sigma_rho, sigma_phi)
            keypoints.append(Keypoint(rho=rho, phi=phi, xy=xy, t=t, cov=cov))
    return keypoints


# ---------------------------------------------------------------------------
# RSCN file format (little-endian):
#   magic "RSCN", u32 version, u32 A, u32 Rb, f64 range_resolution,
#   A x u64 azimuth timestamps (ns), A*Rb u8 intensities azimuth-major.
# ---------------------------------------------------------------------------


def write_scan(path, scan: PolarScan) -> None:
    A, Rb = scan.intensities.shape
    with open(path, "wb") as f:
        f.write(RSCN_MAGIC)
        f.write(struct.pack("<IIId", RSCN_VERSION, A, Rb, scan.range_resolution))
        f.write(scan.azimuth_timestamps.astype("<u8").tobytes())
        f.write(scan.intensities.astype(np.uint8).tobytes())


def read_scan(path) -> PolarScan:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != RSCN_MAGIC:
        raise ValueError(f"{path}: bad magic {data[:4]!r}, expected RSCN")
    version, A, Rb, res = struct.unpack_from("<IIId", data, 4)
    if version != RSCN_VERSION:
        raise ValueError(f"{path}: unsupported RSCN version {version}")
    offset = 4 + struct.calcsize("<IIId")
    ts_bytes = A * 8
    expected = offset + ts_bytes + A * Rb
    if len(data) != expected:
        raise ValueError(f"{path}: truncated scan file ({len(data)} of {expected} bytes)")
    timestamps = np.frombuffer(data, dtype="<u8", count=A, offset=offset).astype(np.int64)
    intensities = np.frombuffer(
        data, dtype=np.uint8, count=A * Rb, offset=offset + ts_bytes
    ).reshape(A, Rb)
    return PolarScan(
        range_resolution=res,
        azimuth_timestamps=timestamps,
        intensities=intensities.copy(),
    )
