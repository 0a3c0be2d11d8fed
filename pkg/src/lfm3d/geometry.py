"""Camera models, projection, robust two-view pose estimation, PnP, rotation metrics.

All functions are pure and operate on float64 numpy arrays. Robust estimators
take an explicit seed through :class:`RansacConfig` so results are reproducible.

Conventions: world-to-camera transforms (``x_cam = R @ x_world + t``), pixel
frame with origin at the top-left, x right, y down, z forward.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CheiralityAmbiguity,
    DegenerateConfiguration,
    InsufficientCorrespondences,
    InvalidConfig,
    NonpositiveDepth,
    NonRotationInput,
    PointBehindCamera,
)

_ROTATION_TOL = 1e-9


def _check_rotation(r: np.ndarray, tol: float = _ROTATION_TOL) -> None:
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (3, 3):
        raise NonRotationInput(f"expected 3x3 rotation, got shape {r.shape}")
    err = np.abs(r.T @ r - np.eye(3)).max()
    if err > tol:
        raise NonRotationInput(f"matrix is not orthonormal (|R^T R - I| = {err:.3e})")
    if abs(np.linalg.det(r) - 1.0) > max(tol, 1e-9):
        raise NonRotationInput("matrix has determinant != +1")


@dataclass(frozen=True)
class Camera:
    """Pinhole camera with known intrinsics and world-to-camera pose."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray  # 3x3, world-to-camera
    translation: np.ndarray  # 3-vector, x_cam = R x_world + t

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidConfig("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidConfig("principal point must lie inside the image")
        try:
            _check_rotation(self.rotation)
        except NonRotationInput as exc:
            raise InvalidConfig(str(exc)) from exc

    @property
    def k_matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]],
            dtype=np.float64,
        )

    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def optical_axis(self) -> np.ndarray:
        """World-frame direction of the camera +z axis."""
        return self.rotation.T @ np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class Pose:
    """Rigid transform; translation is unit-norm for two-view recovery, metric for PnP."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))
        _check_rotation(self.rotation, tol=1e-8)


@dataclass(frozen=True)
class Correspondence2D2D:
    xy_a: np.ndarray  # pixel in image A
    xy_b: np.ndarray  # pixel in image B
    confidence: float = 1.0


@dataclass(frozen=True)
class Correspondence2D3D:
    xy: np.ndarray  # pixel
    point: np.ndarray  # 3D point, canonical/world frame
    confidence: float = 1.0


@dataclass(frozen=True)
class RansacConfig:
    iterations: int = 2000
    threshold_px: float = 1.0
    min_inliers: int = 12
    seed: int = 0
    confidence: float = 0.9999  # adaptive early-termination target


def project(point: np.ndarray, camera: Camera) -> tuple[np.ndarray, float]:
    """Project a world point; returns (pixel, camera-frame depth).

    Raises PointBehindCamera when the camera-frame z is <= 0.
    """
    p_cam = camera.rotation @ np.asarray(point, dtype=np.float64).reshape(3) + camera.translation
    z = p_cam[2]
    if z <= 0:
        raise PointBehindCamera(f"point has nonpositive depth {z:.3e}")
    pixel = np.array(
        [camera.fx * p_cam[0] / z + camera.cx, camera.fy * p_cam[1] / z + camera.cy]
    )
    return pixel, float(z)


def project_many(points: np.ndarray, camera: Camera) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection of (n,3) points; no depth check, returns (pixels, depths)."""
    p_cam = points @ camera.rotation.T + camera.translation
    z = p_cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        px = np.stack(
            [camera.fx * p_cam[:, 0] / z + camera.cx, camera.fy * p_cam[:, 1] / z + camera.cy],
            axis=1,
        )
    return px, z


def unproject(pixel: np.ndarray, depth: float, camera: Camera) -> np.ndarray:
    """Back-project a pixel at the given camera-frame depth to a world point."""
    if depth <= 0:
        raise NonpositiveDepth(f"depth must be positive, got {depth}")
    u, v = np.asarray(pixel, dtype=np.float64).reshape(2)
    p_cam = np.array([(u - camera.cx) / camera.fx * depth, (v - camera.cy) / camera.fy * depth, depth])
    return camera.rotation.T @ (p_cam - camera.translation)


def unproject_many(pixels: np.ndarray, depths: np.ndarray, camera: Camera) -> np.ndarray:
    """Vectorized unproject of (n,2) pixels with (n,) positive depths."""
    u = (pixels[:, 0] - camera.cx) / camera.fx * depths
    v = (pixels[:, 1] - camera.cy) / camera.fy * depths
    p_cam = np.stack([u, v, depths], axis=1)
    return (p_cam - camera.translation) @ camera.rotation


def rotation_error_deg(r_pred: np.ndarray, r_gt: np.ndarray) -> float:
    """Angle in degrees of the residual rotation r_pred^T r_gt, in [0, 180]."""
    r_pred = np.asarray(r_pred, dtype=np.float64)
    r_gt = np.asarray(r_gt, dtype=np.float64)
    _check_rotation(r_pred, tol=1e-6)
    _check_rotation(r_gt, tol=1e-6)
    cos_angle = (np.trace(r_pred.T @ r_gt) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(cos_angle, -1.0, 1.0))))


def relative_pose(cam_a: Camera, cam_b: Camera) -> Pose:
    """B-from-A relative pose with unit-norm translation (zero baseline kept as zero)."""
    r = cam_b.rotation @ cam_a.rotation.T
    t = cam_b.translation - r @ cam_a.translation
    norm = np.linalg.norm(t)
    if norm > 0:
        t = t / norm
    return Pose(rotation=r, translation=t)


def so3_exp(omega: np.ndarray) -> np.ndarray:
    """Rotation matrix from an axis-angle vector."""
    omega = np.asarray(omega, dtype=np.float64).reshape(3)
    theta = np.linalg.norm(omega)
    if theta < 1e-12:
        hat = _hat(omega)
        return np.eye(3) + hat
    axis_hat = _hat(omega / theta)
    return np.eye(3) + np.sin(theta) * axis_hat + (1 - np.cos(theta)) * (axis_hat @ axis_hat)


def _hat(v: np.ndarray) -> np.ndarray:
    return np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]], dtype=np.float64)


# ---------------------------------------------------------------------------
# essential matrix estimation
# ---------------------------------------------------------------------------


def _to_arrays_2d2d(corrs) -> tuple[np.ndarray, np.ndarray]:
    pa = np.array([np.asarray(c.xy_a, dtype=np.float64) for c in corrs])
    pb = np.array([np.asarray(c.xy_b, dtype=np.float64) for c in corrs])
    return pa.reshape(-1, 2), pb.reshape(-1, 2)


def _normalized_coords(pixels: np.ndarray, camera: Camera) -> np.ndarray:
    return np.stack(
        [(pixels[:, 0] - camera.cx) / camera.fx, (pixels[:, 1] - camera.cy) / camera.fy],
        axis=1,
    )


def _hartley_normalize(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    mean_dist = np.sqrt((centered**2).sum(axis=1)).mean()
    scale = np.sqrt(2.0) / max(mean_dist, 1e-12)
    t = np.array(
        [[scale, 0, -scale * centroid[0]], [0, scale, -scale * centroid[1]], [0, 0, 1]],
        dtype=np.float64,
    )
    return centered * scale, t


def _eight_point(xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
    """Normalized 8-point solve for E with xb^T E xa = 0 on camera-normalized coords."""
    na, ta = _hartley_normalize(xa)
    nb, tb = _hartley_normalize(xb)
    a = np.empty((len(xa), 9))
    a[:, 0] = nb[:, 0] * na[:, 0]
    a[:, 1] = nb[:, 0] * na[:, 1]
    a[:, 2] = nb[:, 0]
    a[:, 3] = nb[:, 1] * na[:, 0]
    a[:, 4] = nb[:, 1] * na[:, 1]
    a[:, 5] = nb[:, 1]
    a[:, 6] = na[:, 0]
    a[:, 7] = na[:, 1]
    a[:, 8] = 1.0
    _, _, vt = np.linalg.svd(a, full_matrices=False)
    e = vt[-1].reshape(3, 3)
    return tb.T @ e @ ta


def _project_to_essential(e: np.ndarray) -> np.ndarray:
    """Force singular values to (s, s, 0) with s = 1."""
    u, s, vt = np.linalg.svd(e)
    avg = (s[0] + s[1]) / 2.0
    if avg <= 0:
        raise DegenerateConfiguration("essential candidate collapsed to zero")
    return u @ np.diag([1.0, 1.0, 0.0]) @ vt


def _sampson_px(e: np.ndarray, pa: np.ndarray, pb: np.ndarray, cam_a: Camera, cam_b: Camera) -> np.ndarray:
    """First-order (Sampson) epipolar distance in pixels for each correspondence."""
    f = np.linalg.inv(cam_b.k_matrix).T @ e @ np.linalg.inv(cam_a.k_matrix)
    ha = np.concatenate([pa, np.ones((len(pa), 1))], axis=1)
    hb = np.concatenate([pb, np.ones((len(pb), 1))], axis=1)
    fx = ha @ f.T  # rows: F @ pa
    ftx = hb @ f  # rows: F^T @ pb
    num = (hb * fx).sum(axis=1) ** 2
    denom = fx[:, 0] ** 2 + fx[:, 1] ** 2 + ftx[:, 0] ** 2 + ftx[:, 1] ** 2
    return np.sqrt(num / np.maximum(denom, 1e-300))


def _is_degenerate_2d(pts: np.ndarray) -> bool:
    centered = pts - pts.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False)
    return s[0] < 1e-12 or s[-1] / s[0] < 1e-8


def _ransac_trials(inlier_ratio: float, sample_size: int, confidence: float) -> float:
    eps = 1e-12
    good = max(inlier_ratio, eps) ** sample_size
    if good >= 1.0 - eps:
        return 1.0
    return np.log(max(1.0 - confidence, eps)) / np.log(1.0 - good)


def estimate_essential(
    corrs: list[Correspondence2D2D],
    cam_a: Camera,
    cam_b: Camera,
    cfg: RansacConfig = RansacConfig(),
) -> tuple[np.ndarray, np.ndarray]:
    """RANSAC + normalized 8-point essential matrix; returns (E, inlier mask).

    E satisfies xb^T E xa = 0 on camera-normalized coordinates; its singular
    values are projected to (1, 1, 0). Scoring uses the Sampson distance in
    pixel units with cfg.threshold_px.
    """
    n = len(corrs)
    if n < 8:
        raise InsufficientCorrespondences(f"need >= 8 correspondences, got {n}")
    pa, pb = _to_arrays_2d2d(corrs)
    xa = _normalized_coords(pa, cam_a)
    xb = _normalized_coords(pb, cam_b)

    rng = np.random.default_rng(cfg.seed)
    best_mask = None
    best_count = 0
    for it in range(cfg.iterations):
        idx = rng.choice(n, size=8, replace=False)
        if _is_degenerate_2d(xa[idx]) or _is_degenerate_2d(xb[idx]):
            continue
        try:
            e = _project_to_essential(_eight_point(xa[idx], xb[idx]))
        except (DegenerateConfiguration, np.linalg.LinAlgError):
            continue
        err = _sampson_px(e, pa, pb, cam_a, cam_b)
        mask = err < cfg.threshold_px
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask
            if it + 1 >= _ransac_trials(count / n, 8, cfg.confidence):
                break

    if best_mask is None or best_count < max(cfg.min_inliers, 8):
        raise DegenerateConfiguration(
            f"no model reached min_inliers={cfg.min_inliers} (best {best_count})"
        )

    e = _project_to_essential(_eight_point(xa[best_mask], xb[best_mask]))
    err = _sampson_px(e, pa, pb, cam_a, cam_b)
    mask = err < cfg.threshold_px
    if int(mask.sum()) < max(cfg.min_inliers, 8):
        raise DegenerateConfiguration("inlier support collapsed after refit")
    return e, mask


def _triangulate(xa: np.ndarray, xb: np.ndarray, r: np.ndarray, t: np.ndarray) -> np.ndarray:
    """DLT triangulation in camera-A frame from normalized coords; P_A=[I|0], P_B=[R|t]."""
    p_b = np.concatenate([r, t.reshape(3, 1)], axis=1)
    out = np.empty((len(xa), 3))
    p_a = np.concatenate([np.eye(3), np.zeros((3, 1))], axis=1)
    for i in range(len(xa)):
        a = np.stack(
            [
                xa[i, 0] * p_a[2] - p_a[0],
                xa[i, 1] * p_a[2] - p_a[1],
                xb[i, 0] * p_b[2] - p_b[0],
                xb[i, 1] * p_b[2] - p_b[1],
            ]
        )
        _, _, vt = np.linalg.svd(a)
        xh = vt[-1]
        w = xh[3] if abs(xh[3]) > 1e-15 else 1e-15
        out[i] = xh[:3] / w
    return out


def recover_relative_pose(
    essential: np.ndarray,
    corrs: list[Correspondence2D2D],
    cam_a: Camera,
    cam_b: Camera,
) -> Pose:
    """Select the (R, t) decomposition of E with maximal cheirality support.

    Returns the B-from-A pose with unit-norm translation. Raises
    CheiralityAmbiguity when no decomposition strictly dominates.
    """
    pa, pb = _to_arrays_2d2d(corrs)
    xa = _normalized_coords(pa, cam_a)
    xb = _normalized_coords(pb, cam_b)

    u, _, vt = np.linalg.svd(np.asarray(essential, dtype=np.float64))
    if np.linalg.det(u) < 0:
        u = -u
    if np.linalg.det(vt) < 0:
        vt = -vt
    w = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    r1 = u @ w @ vt
    r2 = u @ w.T @ vt
    t = u[:, 2]

    candidates = [(r1, t), (r1, -t), (r2, t), (r2, -t)]
    counts = []
    for r_cand, t_cand in candidates:
        pts = _triangulate(xa, xb, r_cand, t_cand)
        z_a = pts[:, 2]
        z_b = (pts @ r_cand.T + t_cand)[:, 2]
        counts.append(int(((z_a > 0) & (z_b > 0)).sum()))

    order = np.argsort(counts)[::-1]
    best, second = counts[order[0]], counts[order[1]]
    if best <= second or best <= len(corrs) / 2:
        raise CheiralityAmbiguity(f"cheirality counts {counts} do not single out a pose")
    r_best, t_best = candidates[order[0]]
    return Pose(rotation=r_best, translation=t_best / np.linalg.norm(t_best))


# ---------------------------------------------------------------------------
# PnP
# ---------------------------------------------------------------------------


def _dlt_pnp(x_norm: np.ndarray, pts3d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """DLT pose from >= 6 normalized-pixel / 3D-point pairs; returns (R, t)."""
    n = len(pts3d)
    a = np.zeros((2 * n, 12))
    a[0::2, 0:3] = pts3d
    a[0::2, 3] = 1.0
    a[0::2, 8:11] = -x_norm[:, 0:1] * pts3d
    a[0::2, 11] = -x_norm[:, 0]
    a[1::2, 4:7] = pts3d
    a[1::2, 7] = 1.0
    a[1::2, 8:11] = -x_norm[:, 1:2] * pts3d
    a[1::2, 11] = -x_norm[:, 1]
    _, _, vt = np.linalg.svd(a, full_matrices=False)
    p = vt[-1].reshape(3, 4)
    m = p[:, :3]
    if np.linalg.det(m) < 0:
        p = -p
        m = p[:, :3]
    u, s, vt_m = np.linalg.svd(m)
    scale = s.mean()
    if scale < 1e-12:
        raise DegenerateConfiguration("rank-deficient DLT solution")
    r = u @ vt_m
    t = p[:, 3] / scale
    return r, t


def _reprojection_err_px(
    r: np.ndarray, t: np.ndarray, pts3d: np.ndarray, pixels: np.ndarray, k: np.ndarray
) -> np.ndarray:
    p_cam = pts3d @ r.T + t
    z = p_cam[:, 2]
    err = np.full(len(pts3d), np.inf)
    front = z > 1e-12
    if front.any():
        u = k[0, 0] * p_cam[front, 0] / z[front] + k[0, 2]
        v = k[1, 1] * p_cam[front, 1] / z[front] + k[1, 2]
        err[front] = np.hypot(u - pixels[front, 0], v - pixels[front, 1])
    return err


def _refine_pnp(
    r: np.ndarray,
    t: np.ndarray,
    pts3d: np.ndarray,
    pixels: np.ndarray,
    k: np.ndarray,
    iterations: int = 15,
) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Newton on pixel reprojection error over (axis-angle, translation)."""
    fx, fy = k[0, 0], k[1, 1]
    for _ in range(iterations):
        p_cam = pts3d @ r.T + t
        z = np.maximum(p_cam[:, 2], 1e-9)
        u = fx * p_cam[:, 0] / z + k[0, 2]
        v = fy * p_cam[:, 1] / z + k[1, 2]
        res = np.stack([u - pixels[:, 0], v - pixels[:, 1]], axis=1).reshape(-1)

        n = len(pts3d)
        jac = np.zeros((2 * n, 6))
        inv_z = 1.0 / z
        # d(pixel)/d(p_cam)
        du = np.stack([fx * inv_z, np.zeros(n), -fx * p_cam[:, 0] * inv_z**2], axis=1)
        dv = np.stack([np.zeros(n), fy * inv_z, -fy * p_cam[:, 1] * inv_z**2], axis=1)
        # p_cam = exp(dw) (R X) + t + dt  =>  d p_cam/d dw = -[R X]_x, d p_cam/d dt = I
        rx = p_cam - t
        for i in range(n):
            dpdw = -_hat(rx[i])
            jac[2 * i, :3] = du[i] @ dpdw
            jac[2 * i, 3:] = du[i]
            jac[2 * i + 1, :3] = dv[i] @ dpdw
            jac[2 * i + 1, 3:] = dv[i]
        h = jac.T @ jac + 1e-12 * np.eye(6)
        g = jac.T @ res
        try:
            delta = np.linalg.solve(h, -g)
        except np.linalg.LinAlgError:
            break
        r = so3_exp(delta[:3]) @ r
        t = t + delta[3:]
        if np.linalg.norm(delta) < 1e-14:
            break
    # re-orthonormalize to keep the Pose invariant tight
    u_svd, _, vt_svd = np.linalg.svd(r)
    r = u_svd @ vt_svd
    if np.linalg.det(r) < 0:
        r = u_svd @ np.diag([1.0, 1.0, -1.0]) @ vt_svd
    return r, t


def _is_degenerate_3d(pts: np.ndarray) -> bool:
    centered = pts - pts.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False)
    return s[0] < 1e-12 or s[-1] / s[0] < 1e-8


def solve_pnp(
    corrs: list[Correspondence2D3D],
    camera: Camera,
    cfg: RansacConfig = RansacConfig(),
) -> tuple[Pose, np.ndarray]:
    """Robust PnP: RANSAC over 6-point DLT samples + Gauss-Newton refinement.

    Returns (pose with metric translation, inlier mask). Near-coplanar samples
    (condition number > 1e8) are skipped and resampled.
    """
    n = len(corrs)
    if n < 6:
        raise InsufficientCorrespondences(f"need >= 6 correspondences, got {n}")
    pixels = np.array([np.asarray(c.xy, dtype=np.float64) for c in corrs]).reshape(-1, 2)
    pts3d = np.array([np.asarray(c.point, dtype=np.float64) for c in corrs]).reshape(-1, 3)
    k = camera.k_matrix
    x_norm = _normalized_coords(pixels, camera)

    rng = np.random.default_rng(cfg.seed)
    best_mask = None
    best_count = 0
    for it in range(cfg.iterations):
        idx = rng.choice(n, size=6, replace=False)
        if _is_degenerate_3d(pts3d[idx]) or _is_degenerate_2d(x_norm[idx]):
            continue
        try:
            r, t = _dlt_pnp(x_norm[idx], pts3d[idx])
        except (DegenerateConfiguration, np.linalg.LinAlgError):
            continue
        err = _reprojection_err_px(r, t, pts3d, pixels, k)
        mask = err < cfg.threshold_px
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask
            if it + 1 >= _ransac_trials(count / n, 6, cfg.confidence):
                break

    if best_mask is None or best_count < max(cfg.min_inliers, 6):
        raise DegenerateConfiguration(
            f"no PnP model reached min_inliers={cfg.min_inliers} (best {best_count})"
        )

    if _is_degenerate_3d(pts3d[best_mask]):
        raise DegenerateConfiguration("inlier 3D set is degenerate")
    r, t = _dlt_pnp(x_norm[best_mask], pts3d[best_mask])
    r, t = _refine_pnp(r, t, pts3d[best_mask], pixels[best_mask], k)
    err = _reprojection_err_px(r, t, pts3d, pixels, k)
    mask = err < cfg.threshold_px
    if int(mask.sum()) < max(cfg.min_inliers, 6):
        raise DegenerateConfiguration("inlier support collapsed after refinement")
    return Pose(rotation=r, translation=t), mask
