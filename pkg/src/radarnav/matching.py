"""Binary keypoint descriptors and brute-force matching across scans.

Descriptors are 256 pairwise intensity comparisons over a fixed seeded
sampling pattern in a Cartesian patch around the keypoint, rotated by
the patch intensity-centroid direction so the descriptor is (roughly)
orientation-normalized.  Matching is mutual nearest neighbor under
Hamming distance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .frontend import Keypoint, PolarScan

DESCRIPTOR_BITS = 256
PATCH_HALF_SIZE = 8.0  # meters; 16 m x 16 m patch
DEFAULT_PATTERN_SEED = 20240501
DEFAULT_MATCH_THRESHOLD = 64


def _sampling_pattern(seed: int) -> np.ndarray:
    """(256, 2, 2) pair offsets in meters, fixed for a given seed."""
    rng = np.random.default_rng(seed)
    pts = rng.normal(0.0, PATCH_HALF_SIZE / 2.5, size=(DESCRIPTOR_BITS, 2, 2))
    return np.clip(pts, -PATCH_HALF_SIZE, PATCH_HALF_SIZE)


def _centroid_grid() -> np.ndarray:
    """Fixed disc of sample offsets used for the orientation estimate."""
    lin = np.linspace(-PATCH_HALF_SIZE, PATCH_HALF_SIZE, 17)
    gx, gy = np.meshgrid(lin, lin)
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    return pts[np.linalg.norm(pts, axis=1) <= PATCH_HALF_SIZE]

_CENTROID_GRID = _centroid_grid()


def _sample_polar(scan: PolarScan, xy: np.ndarray) -> np.ndarray:
    """Bilinear intensity lookup at Cartesian sensor-frame points (N, 2).

    Points outside the scan's range extent read as zero; azimuth wraps.
    """
    A, Rb = scan.intensities.shape
    rho = np.linalg.norm(xy, axis=1)
    phi = np.arctan2(xy[:, 1], xy[:, 0]) % (2.0 * np.pi)

    r = rho / scan.range_resolution - 0.5
    a = phi / (2.0 * np.pi) * A

    a0 = np.floor(a).astype(int)
    r0 = np.floor(r).astype(int)
    fa = a - a0
    fr = r - r0

    out = np.zeros(xy.shape[0])
    img = scan.intensities.astype(float)
    valid = (r0 >= -1) & (r0 < Rb)
    for da, wa in ((0, 1.0 - fa), (1, fa)):
        ai = (a0 + da) % A
        for dr, wr in ((0, 1.0 - fr), (1, fr)):
            ri = r0 + dr
            ok = valid & (ri >= 0) & (ri < Rb)
            contrib = np.zeros_like(out)
            contrib[ok] = img[ai[ok], ri[ok]]
            out += wa * wr * contrib
    return out


def describe(
    scan: PolarScan, kp: Keypoint, pattern_seed: int = DEFAULT_PATTERN_SEED
) -> np.ndarray:
    """256-bit descriptor for one keypoint, packed into 32 uint8 bytes."""
    return describe_all(scan, [kp], pattern_seed=pattern_seed)[0]


def describe_all(
    scan: PolarScan,
    keypoints: list[Keypoint],
    pattern_seed: int = DEFAULT_PATTERN_SEED,
) -> np.ndarray:
    """Descriptors for all keypoints, shape (N, 32) uint8."""
    if not keypoints:
        return np.zeros((0, DESCRIPTOR_BITS // 8), dtype=np.uint8)
    pattern = _sampling_pattern(pattern_seed)
    centers = np.array([kp.xy for kp in keypoints])
    n = centers.shape[0]

    # orientation from the intensity centroid over a fixed disc
    grid = _CENTROID_GRID
    pts = centers[:, None, :] + grid[None, :, :]
    vals = _sample_polar(scan, pts.reshape(-1, 2)).reshape(n, -1)
    cx = vals @ grid[:, 0]
    cy = vals @ grid[:, 1]
    alpha = np.where((cx == 0.0) & (cy == 0.0), 0.0, np.arctan2(cy, cx))

    ca, sa = np.cos(alpha), np.sin(alpha)
    # rotate all pair offsets by each keypoint's orientation
    off = pattern.reshape(1, -1, 2)  # (1, 512, 2)
    rx = off[..., 0] * ca[:, None] - off[..., 1] * sa[:, None]
    ry = off[..., 0] * sa[:, None] + off[..., 1] * ca[:, None]
    sample_pts = np.stack([rx, ry], axis=-1) + centers[:, None, :]
    intensities = _sample_polar(scan, sample_pts.reshape(-1, 2)).reshape(
        n, DESCRIPTOR_BITS, 2
    )
    bits = (intensities[:, :, 0] > intensities[:, :, 1]).astype(np.uint8)
    return np.packbits(bits, axis=1)


def hamming_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise Hamming distances between packed descriptor arrays."""
    return np.bitwise_count(a[:, None, :] ^ b[None, :, :]).sum(axis=2)


@dataclass(frozen=True)
class CorrespondenceSet:
    """Matched keypoint index pairs between a previous and current scan."""

    prev_indices: np.ndarray
    curr_indices: np.ndarray

    def __len__(self) -> int:
        return len(self.prev_indices)


def match(
    prev_desc: np.ndarray,
    curr_desc: np.ndarray,
    threshold: int = DEFAULT_MATCH_THRESHOLD,
) -> CorrespondenceSet:
    """Mutual nearest neighbors under Hamming distance, gated by threshold.

    Deterministic: ties resolve to the lowest index on both sides.
    """
    if prev_desc.shape[0] == 0 or curr_desc.shape[0] == 0:
        return CorrespondenceSet(np.zeros(0, dtype=int), np.zeros(0, dtype=int))
    d = hamming_matrix(prev_desc, curr_desc)
    best_for_prev = np.argmin(d, axis=1)
    best_for_curr = np.argmin(d, axis=0)
    prev_idx = np.arange(prev_desc.shape[0])
    mutual = best_for_curr[best_for_prev] == prev_idx
    accepted = mutual & (d[prev_idx, best_for_prev] <= threshold)
    return CorrespondenceSet(
        prev_indices=prev_idx[accepted],
        curr_indices=best_for_prev[accepted],
    )
