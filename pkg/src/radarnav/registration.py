"""Robust non-iterative scan-to-scan registration.

Pipeline: pairwise distance-consistency graph -> maximum-clique inlier
selection -> rotation from translation-invariant measurements via exact
scalar truncated-least-squares (adaptive voting) -> component-wise
translation, each with a closed-form variance of the estimate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import ang, rot2, wrap_angle

DEGENERATE_TIM_EPS = 1e-6


class EstimationFailure(RuntimeError):
    """Raised when a pose cannot be estimated from the given correspondences."""


@dataclass(frozen=True)
class ScalarTlsProblem:
    """Sum of truncated quadratics: sum_m min((x - x_m)^2 / var_m, cbar2)."""

    measurements: np.ndarray
    variances: np.ndarray
    cbar2: float

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.measurements, dtype=float))
        v = np.atleast_1d(np.asarray(self.variances, dtype=float))
        if x.size == 0 or x.shape != v.shape:
            raise ValueError("measurements/variances must be equal-length, non-empty")
        if np.any(v <= 0.0) or self.cbar2 <= 0.0:
            raise ValueError("variances and cbar2 must be positive")
        object.__setattr__(self, "measurements", x)
        object.__setattr__(self, "variances", v)


@dataclass(frozen=True)
class ScalarTlsSolution:
    x_hat: float
    var_x_hat: float
    inliers: np.ndarray  # indices into the measurement vector
    cost: float


def consensus_halfwidths(problem: ScalarTlsProblem, printed_boundaries: bool = False) -> np.ndarray:
    """Half-width of each measurement's consensus interval.

    The residual test (x - x_m)^2 / var_m <= cbar2 gives half-width
    sigma_m * cbar.  ``printed_boundaries`` selects the alternative
    var_m * cbar2 form instead.
    """
    if printed_boundaries:
        return problem.variances * problem.cbar2
    return np.sqrt(problem.variances) * np.sqrt(problem.cbar2)


def solve_scalar_tls(
    problem: ScalarTlsProblem, printed_boundaries: bool = False
) -> ScalarTlsSolution:
    """Exact global minimizer of a sum of truncated scalar quadratics.

    Sorts the 2M consensus-interval boundaries and sweeps the 2M-1 segments
    between them, maintaining running weighted sums.  On each segment the
    active set is fixed, so the objective is a quadratic whose minimizer is
    the inverse-variance-weighted mean, clamped into the segment.  O(M log M).
    """
    x = problem.measurements
    var = problem.variances
    cbar2 = problem.cbar2
    M = x.size
    h = consensus_halfwidths(problem, printed_boundaries)
    lo = x - h
    hi = x + h

    w = 1.0 / var
    wx = x / var
    wxx = x * x / var

    # entering events (lo) ordered before leaving events (hi) on value ties,
    # so zero-width segments keep both measurements active
    vals = np.concatenate([lo, hi])
    d_w = np.concatenate([w, -w])
    d_wx = np.concatenate([wx, -wx])
    d_wxx = np.concatenate([wxx, -wxx])
    d_n = np.concatenate([np.ones(M), -np.ones(M)])
    order = np.argsort(vals, kind="stable")

    sv = vals[order]
    W = np.cumsum(d_w[order])[:-1]
    WX = np.cumsum(d_wx[order])[:-1]
    WXX = np.cumsum(d_wxx[order])[:-1]
    N = np.cumsum(d_n[order])[:-1]

    left = sv[:-1]
    right = sv[1:]

    active = N > 0.5
    cand = np.where(active, np.clip(np.divide(WX, np.where(active, W, 1.0)), left, right), left)
    cost = np.where(
        active,
        W * cand * cand - 2.0 * WX * cand + WXX + (M - N) * cbar2,
        np.inf,
    )

    best_cost = cost.min()
    ties = np.flatnonzero(cost == best_cost)
    k = ties[int(np.argmin(cand[ties]))]
    x_hat = float(cand[k])

    # active set of the winning segment: measurements whose consensus
    # interval contains the whole segment
    inliers = np.flatnonzero((lo <= left[k]) & (right[k] <= hi))
    inv_sum = float(np.sum(1.0 / var[inliers]))
    return ScalarTlsSolution(
        x_hat=x_hat,
        var_x_hat=1.0 / inv_sum,
        inliers=inliers,
        cost=float(best_cost),
    )


# ---------------------------------------------------------------------------
# Compatibility graph and maximum clique
# ---------------------------------------------------------------------------


@dataclass
class CompatibilityGraph:
    """Undirected distance-consistency graph over correspondence indices."""

    n: int
    adjacency: list[int]  # bitmask per node

    def has_edge(self, i: int, j: int) -> bool:
        return bool((self.adjacency[i] >> j) & 1)

    def edges(self) -> list[tuple[int, int]]:
        out = []
        for i in range(self.n):
            m = self.adjacency[i] >> (i + 1)
            j = i + 1
            while m:
                if m & 1:
                    out.append((i, j))
                m >>= 1
                j += 1
        return out


def build_graph(p_xy: np.ndarray, q_xy: np.ndarray, thr: float) -> CompatibilityGraph:
    """Graph with an edge (i, j) whenever | ||q_j - q_i|| - ||p_j - p_i|| | <= thr.

    p_xy, q_xy: (N, 2) matched keypoint coordinates. Requires N >= 2.
    """
    p_xy = np.asarray(p_xy, dtype=float)
    q_xy = np.asarray(q_xy, dtype=float)
    n = p_xy.shape[0]
    if n < 2:
        raise EstimationFailure("need at least 2 correspondences to build a graph")
    dp = np.linalg.norm(p_xy[:, None, :] - p_xy[None, :, :], axis=-1)
    dq = np.linalg.norm(q_xy[:, None, :] - q_xy[None, :, :], axis=-1)
    compat = np.abs(dq - dp) <= thr
    np.fill_diagonal(compat, False)
    adjacency = []
    for i in range(n):
        mask = 0
        for j in np.flatnonzero(compat[i]):
            mask |= 1 << int(j)
        adjacency.append(mask)
    return CompatibilityGraph(n=n, adjacency=adjacency)


@dataclass
class CliqueResult:
    nodes: list[int]
    exact: bool  # False when the branch budget was exhausted


def _degeneracy_order(graph: CompatibilityGraph) -> list[int]:
    n = graph.n
    deg = [bin(a).count("1") for a in graph.adjacency]
    removed = [False] * n
    order = []
    for _ in range(n):
        v = min((i for i in range(n) if not removed[i]), key=lambda i: (deg[i], i))
        order.append(v)
        removed[v] = True
        m = graph.adjacency[v]
        j = 0
        while m:
            if (m & 1) and not removed[j]:
                deg[j] -= 1
            m >>= 1
            j += 1
    return order


def _bits(mask: int):
    while mask:
        b = mask & -mask
        yield b.bit_length() - 1
        mask ^= b


def max_clique(graph: CompatibilityGraph, budget: int = 10_000_000) -> CliqueResult:
    """Maximum clique by branch and bound with a greedy-coloring bound.

    Exact within ``budget`` branch steps; past the budget the best clique
    found so far is returned with ``exact=False``.  Ties between maximum
    cliques resolve to the smallest sorted node list.
    """
    n = graph.n
    if n == 0:
        raise EstimationFailure("empty graph")
    adj = graph.adjacency

    # greedy clique along the reverse degeneracy order seeds the lower bound
    best: list[int] = []
    seed_mask = 0
    for v in reversed(_degeneracy_order(graph)):
        if seed_mask & adj[v] == seed_mask:
            best.append(v)
            seed_mask |= 1 << v
    best.sort()

    steps = 0
    exhausted = False

    def color_bound(cand: int) -> int:
        colors = 0
        rest = cand
        while rest:
            colors += 1
            avail = rest
            while avail:
                b = avail & -avail
                v = b.bit_length() - 1
                avail &= ~adj[v] & ~b
                rest ^= b
        return colors

    def expand(clique: list[int], cand: int):
        nonlocal best, steps, exhausted
        while cand and not exhausted:
            steps += 1
            if steps > budget:
                exhausted = True
                return
            need = len(best) - len(clique)
            # prune only strictly-worse branches so lexicographic ties survive
            if bin(cand).count("1") < need or color_bound(cand) < need:
                return
            b = cand & -cand
            v = b.bit_length() - 1
            clique.append(v)
            sub = cand & adj[v]
            if sub:
                expand(clique, sub)
            else:
                size = len(clique)
                if size > len(best) or (size == len(best) and sorted(clique) < sorted(best)):
                    best = sorted(clique)
            clique.pop()
            cand ^= b

    expand([], (1 << n) - 1)
    return CliqueResult(nodes=sorted(best), exact=not exhausted)


# ---------------------------------------------------------------------------
# Rotation / translation estimation
# ---------------------------------------------------------------------------


def tim_angle_variance(p_ij, q_ij, cov_p_ij, cov_q_ij) -> float:
    """Variance of the per-TIM rotation sample Ang(q_ij) - Ang(p_ij).

    The pair covariance is projected onto the direction tangential to the
    TIM and normalized by its squared length, for both scans.
    """
    out = 0.0
    for v, C in ((p_ij, cov_p_ij), (q_ij, cov_q_ij)):
        v = np.asarray(v, dtype=float)
        norm = np.hypot(v[0], v[1])
        if norm <= DEGENERATE_TIM_EPS:
            raise ValueError("degenerate TIM")
        tangent = np.array([-v[1], v[0]]) / norm
        sigma_tau2 = float(tangent @ np.asarray(C, dtype=float) @ tangent)
        out += sigma_tau2 / (norm * norm)
    return out


def _tim_angle_variances(tims: np.ndarray, covs: np.ndarray) -> np.ndarray:
    """Vectorized one-scan half of tim_angle_variance over (K, 2) TIMs."""
    norms = np.linalg.norm(tims, axis=1)
    tangents = np.stack([-tims[:, 1], tims[:, 0]], axis=1) / norms[:, None]
    sigma_tau2 = np.einsum("ni,nij,nj->n", tangents, covs, tangents)
    return sigma_tau2 / (norms * norms)


def _circular_median(angles: np.ndarray) -> float:
    """Angle among the inputs minimizing the summed circular distance.

    O(K log K): with the angles sorted and unrolled over two periods,
    each candidate's summed distance splits at the antipode into a
    near-arc and a far-arc part, both prefix-sum expressible.
    """
    b = np.sort(angles)
    K = b.size
    b2 = np.concatenate([b, b + 2.0 * np.pi])
    S = np.concatenate([[0.0], np.cumsum(b2)])
    k = np.arange(K)
    m = np.searchsorted(b2, b + np.pi, side="right")
    near = (S[m] - S[k]) - (m - k) * b
    far = (K - (m - k)) * (2.0 * np.pi + b) - (S[k + K] - S[m])
    return float(b[int(np.argmin(near + far))])


def estimate_rotation(
    p_tims: np.ndarray,
    q_tims: np.ndarray,
    var_theta: np.ndarray,
    cbar2: float,
    printed_boundaries: bool = False,
) -> tuple[float, float, np.ndarray]:
    """Rotation angle from TIM pairs via scalar TLS over angle differences.

    Angle samples are unwrapped into a window centered on their circular
    median before solving, so rotations near +-pi stay contiguous.
    Returns (theta_hat, var_theta_hat, inlier indices).
    """
    p_tims = np.asarray(p_tims, dtype=float)
    q_tims = np.asarray(q_tims, dtype=float)
    if p_tims.shape[0] == 0:
        raise EstimationFailure("no usable TIMs for rotation")
    raw = np.arctan2(q_tims[:, 1], q_tims[:, 0]) - np.arctan2(p_tims[:, 1], p_tims[:, 0])
    theta = (raw + np.pi) % (2.0 * np.pi) - np.pi
    center = _circular_median(theta)
    x = center + (theta - center + np.pi) % (2.0 * np.pi) - np.pi
    sol = solve_scalar_tls(
        ScalarTlsProblem(x, np.asarray(var_theta, dtype=float), cbar2),
        printed_boundaries=printed_boundaries,
    )
    return wrap_angle(sol.x_hat), sol.var_x_hat, sol.inliers


def estimate_translation(
    p_xy: np.ndarray,
    q_xy: np.ndarray,
    cov_p: np.ndarray,
    cov_q: np.ndarray,
    theta_hat: float,
    cbar2: float,
    printed_boundaries: bool = False,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Component-wise translation via scalar TLS on t_i = q_i - R(theta) p_i.

    Per-sample variances are the diagonal of C_q + R C_p R^T.  Returns
    (t_hat, per-component variances, inlier indices common to both axes).
    """
    p_xy = np.asarray(p_xy, dtype=float)
    q_xy = np.asarray(q_xy, dtype=float)
    if p_xy.shape[0] == 0:
        raise EstimationFailure("no inlier correspondences for translation")
    R = rot2(theta_hat)
    t_samples = q_xy - p_xy @ R.T
    cov_t = np.asarray(cov_q) + np.einsum("ab,nbc,dc->nad", R, np.asarray(cov_p), R)
    t_hat = np.empty(2)
    var_t = np.empty(2)
    inlier_sets = []
    for j in range(2):
        sol = solve_scalar_tls(
            ScalarTlsProblem(t_samples[:, j], cov_t[:, j, j], cbar2),
            printed_boundaries=printed_boundaries,
        )
        t_hat[j] = sol.x_hat
        var_t[j] = sol.var_x_hat
        inlier_sets.append(set(sol.inliers.tolist()))
    common = np.array(sorted(inlier_sets[0] & inlier_sets[1]), dtype=int)
    return t_hat, var_t, common


@dataclass(frozen=True)
class PoseObservation:
    """Planar pose estimate from the radar branch with per-component variances."""

    theta_hat: float
    t_hat: np.ndarray
    var_theta: float
    var_t: np.ndarray
    n_inliers: int
    low_confidence: bool = False


@dataclass
class RegistrationParams:
    thr_for_inlier: float = 0.3
    cbar_tangential: float = 0.0262  # cbar^2 for the rotation problem
    cbar_radial: float = 0.1        # cbar^2 for the translation problems
    edge_cap: int = 2000
    clique_budget: int = 10_000_000
    variance_inflation: float = 100.0
    translation_from_all: bool = False
    printed_boundaries: bool = False
    edge_subsample_seed: int = 7


def register(
    p_xy: np.ndarray,
    q_xy: np.ndarray,
    cov_p: np.ndarray,
    cov_q: np.ndarray,
    params: RegistrationParams | None = None,
) -> PoseObservation:
    """Estimate the planar rigid motion mapping previous-scan points p to q.

    p_xy/q_xy: (N, 2) matched coordinates; cov_p/cov_q: (N, 2, 2) keypoint
    covariances.  Raises EstimationFailure for N < 3 or when no usable
    rotation samples remain; a clique smaller than 3 yields a result with
    inflated variances and ``low_confidence`` set.
    """
    params = params or RegistrationParams()
    p_xy = np.asarray(p_xy, dtype=float)
    q_xy = np.asarray(q_xy, dtype=float)
    cov_p = np.asarray(cov_p, dtype=float)
    cov_q = np.asarray(cov_q, dtype=float)
    n = p_xy.shape[0]
    if n < 3:
        raise EstimationFailure(f"need at least 3 correspondences, got {n}")

    graph = build_graph(p_xy, q_xy, params.thr_for_inlier)
    clique = max_clique(graph, budget=params.clique_budget)
    nodes = np.array(clique.nodes, dtype=int)

    # TIMs from all clique edges (complete graph on the clique), capped
    ii, jj = np.triu_indices(len(nodes), k=1)
    if ii.size > params.edge_cap:
        rng = np.random.default_rng(params.edge_subsample_seed)
        keep = rng.choice(ii.size, size=params.edge_cap, replace=False)
        keep.sort()
        ii, jj = ii[keep], jj[keep]
    a, b = nodes[ii], nodes[jj]
    p_tims = p_xy[b] - p_xy[a]
    q_tims = q_xy[b] - q_xy[a]
    cov_pt = cov_p[b] + cov_p[a]
    cov_qt = cov_q[b] + cov_q[a]

    norms_p = np.linalg.norm(p_tims, axis=1)
    norms_q = np.linalg.norm(q_tims, axis=1)
    usable = (norms_p > DEGENERATE_TIM_EPS) & (norms_q > DEGENERATE_TIM_EPS)
    p_tims, q_tims = p_tims[usable], q_tims[usable]
    cov_pt, cov_qt = cov_pt[usable], cov_qt[usable]
    if p_tims.shape[0] == 0:
        raise EstimationFailure("no usable TIMs after degeneracy filtering")

    var_theta_k = _tim_angle_variances(p_tims, cov_pt) + _tim_angle_variances(q_tims, cov_qt)
    theta_hat, var_theta, _ = estimate_rotation(
        p_tims, q_tims, var_theta_k, params.cbar_tangential,
        printed_boundaries=params.printed_boundaries,
    )

    if params.translation_from_all:
        sel = np.arange(n)
    else:
        sel = nodes
    t_hat, var_t, _ = estimate_translation(
        p_xy[sel], q_xy[sel], cov_p[sel], cov_q[sel],
        theta_hat, params.cbar_radial,
        printed_boundaries=params.printed_boundaries,
    )

    low_confidence = len(nodes) < 3
    if low_confidence:
        var_theta *= params.variance_inflation
        var_t = var_t * params.variance_inflation
    return PoseObservation(
        theta_hat=theta_hat,
        t_hat=t_hat,
        var_theta=var_theta,
        var_t=var_t,
        n_inliers=len(nodes),
        low_confidence=low_confidence,
    )
