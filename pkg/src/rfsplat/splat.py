"""Forward-only Gaussian splatting: evaluate, project, composite.

Conventions
-----------
* Quaternions are ``(w, x, y, z)`` and must be unit length.
* The camera extrinsic maps world points to camera space, ``t = R m + c``,
  with +z pointing forward. Pixel ``(row i, col j)`` has its center at
  image coordinates ``(x=j, y=i)``.
* The 2D footprint of a splat keeps the opacity as its peak value and is
  clamped to 0.999 so transmittance never reaches exactly zero.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InvalidInputError

__all__ = [
    "CameraModel",
    "GaussianPrimitive",
    "ProjectedGaussian",
    "covariance_from_factors",
    "evaluate_gaussian",
    "jacobian_check",
    "points_to_gaussians",
    "project_gaussian",
    "project_gaussians",
    "quaternion_to_rotation",
    "render_image",
    "render_pixel",
    "splat_weight",
    "to_uint8",
    "write_png",
    "write_ppm",
]

NEAR_PLANE = 0.01
MAX_ALPHA = 0.999
FOOTPRINT_SIGMAS = 3.0


def quaternion_to_rotation(q):
    """Rotation matrix of a unit quaternion ``(w, x, y, z)``; batched over leading axes."""
    q = np.asarray(q, dtype=float)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def covariance_from_factors(rotation, scale):
    """Sigma = R S S^T R^T from a unit quaternion and per-axis scales."""
    R = quaternion_to_rotation(rotation)
    M = R * np.asarray(scale, dtype=float)[..., None, :]
    cov = M @ np.swapaxes(M, -1, -2)
    return 0.5 * (cov + np.swapaxes(cov, -1, -2))


@dataclass(frozen=True, eq=False)
class GaussianPrimitive:
    mean: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    scale: np.ndarray = field(default_factory=lambda: np.ones(3))
    opacity: float = 1.0
    color: np.ndarray = field(default_factory=lambda: np.ones(3))

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(3)
        rot = np.asarray(self.rotation, dtype=float).reshape(4)
        scale = np.asarray(self.scale, dtype=float).reshape(3)
        color = np.asarray(self.color, dtype=float).reshape(3)
        if not np.all(np.isfinite(mean)):
            raise InvalidInputError("gaussian mean must be finite")
        if abs(np.linalg.norm(rot) - 1.0) > 1e-9:
            raise InvalidInputError("rotation quaternion must have unit norm")
        if not np.all(scale > 0):
            raise InvalidInputError("scales must be positive")
        if not 0 < self.opacity <= 1:
            raise InvalidInputError("opacity must lie in (0, 1]")
        if not np.all((color >= 0) & (color <= 1)):
            raise InvalidInputError("color channels must lie in [0, 1]")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "color", color)

    @property
    def covariance(self):
        return covariance_from_factors(self.rotation, self.scale)


def evaluate_gaussian(g, z):
    """Opacity-weighted 3D Gaussian density at ``z`` (peak equals opacity)."""
    d = np.asarray(z, dtype=float) - g.mean
    # Mahalanobis distance through the factors avoids forming Sigma^-1.
    u = (quaternion_to_rotation(g.rotation).T @ d) / g.scale
    return float(g.opacity * math.exp(-0.5 * float(u @ u)))


@dataclass(frozen=True, eq=False)
class CameraModel:
    """Pinhole camera; ``extrinsic`` is the 3x4 world-to-camera matrix."""

    extrinsic: np.ndarray
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        E = np.asarray(self.extrinsic, dtype=float).reshape(3, 4)
        R = E[:, :3]
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-8, rtol=0):
            raise InvalidInputError("extrinsic rotation block is not orthonormal")
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidInputError("focal lengths must be positive")
        if int(self.width) < 1 or int(self.height) < 1:
            raise InvalidInputError("image size must be positive")
        object.__setattr__(self, "extrinsic", E)

    @property
    def intrinsic(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def rotation(self):
        return self.extrinsic[:, :3]

    @property
    def translation(self):
        return self.extrinsic[:, 3]

    @classmethod
    def from_dict(cls, d):
        try:
            intr = d["intrinsic"]
            if isinstance(intr, dict):
                intr = [intr["fx"], intr["fy"], intr["cx"], intr["cy"]]
            ext = np.asarray(d["extrinsic"], dtype=float)
            if ext.size != 12 or len(intr) != 4:
                raise InvalidInputError("extrinsic needs 12 numbers and intrinsic 4")
            return cls(ext.reshape(3, 4), *map(float, intr), int(d["width"]), int(d["height"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInputError(f"bad camera description: {exc!r}") from exc

    @classmethod
    def load(cls, source):
        return cls.from_dict(json.load(source))

    def to_dict(self):
        return {
            "extrinsic": self.extrinsic.ravel().tolist(),
            "intrinsic": [self.fx, self.fy, self.cx, self.cy],
            "width": int(self.width),
            "height": int(self.height),
        }

    @classmethod
    def look_along_x(cls, width, height, fx, fy=None, cx=None, cy=None):
        """Camera at the origin viewing the radar's +x axis (image up = +z)."""
        R = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])
        E = np.hstack([R, np.zeros((3, 1))])
        fy = fx if fy is None else fy
        cx = (width - 1) / 2 if cx is None else cx
        cy = (height - 1) / 2 if cy is None else cy
        return cls(E, fx, fy, cx, cy, width, height)


@dataclass(frozen=True, eq=False)
class ProjectedGaussian:
    mean2d: np.ndarray
    cov2d: np.ndarray
    view_depth: float
    opacity: float
    color: np.ndarray
    index: int = 0

    @property
    def conic(self):
        return np.linalg.inv(self.cov2d)


def _projection_jacobian(t, fx, fy):
    x, y, z = t[..., 0], t[..., 1], t[..., 2]
    J = np.zeros(t.shape[:-1] + (2, 3))
    J[..., 0, 0] = fx / z
    J[..., 0, 2] = -fx * x / (z * z)
    J[..., 1, 1] = fy / z
    J[..., 1, 2] = -fy * y / (z * z)
    return J


def project_gaussians(means, covs, cam):
    """Batched EWA projection.

    Returns ``(mean2d, cov2d, depth, visible)``; rows with ``visible`` False
    lie on or behind the near plane and carry undefined 2D values.
    """
    means = np.asarray(means, dtype=float).reshape(-1, 3)
    covs = np.asarray(covs, dtype=float).reshape(-1, 3, 3)
    Wr = cam.rotation
    t = means @ Wr.T + cam.translation
    depth = t[:, 2]
    visible = depth > NEAR_PLANE
    safe = np.where(visible[:, None], t, np.array([0.0, 0.0, 1.0]))
    uvw = safe @ cam.intrinsic.T
    mean2d = uvw[:, :2] / uvw[:, 2:3]
    T = _projection_jacobian(safe, cam.fx, cam.fy) @ Wr
    cov2d = T @ covs @ np.swapaxes(T, -1, -2)
    cov2d = 0.5 * (cov2d + np.swapaxes(cov2d, -1, -2))
    return mean2d, cov2d, depth, visible


def project_gaussian(g, cam, index=0):
    """Project one primitive; returns None when it is culled by the near plane."""
    mean2d, cov2d, depth, visible = project_gaussians(g.mean, g.covariance, cam)
    if not visible[0]:
        return None
    return ProjectedGaussian(mean2d[0], cov2d[0], float(depth[0]), float(g.opacity), g.color, index)


def splat_weight(pg, p):
    """Clamped 2D footprint value of ``pg`` at pixel position ``p``."""
    d = np.asarray(p, dtype=float) - pg.mean2d
    power = -0.5 * float(d @ np.linalg.solve(pg.cov2d, d))
    return min(max(pg.opacity * math.exp(power), 0.0), MAX_ALPHA)


def render_pixel(splats, p, return_transmittance=False):
    """Front-to-back composite of ``splats`` (sorted by depth) at ``p``.

    With ``return_transmittance`` also returns the transmittance after each
    term, which is non-increasing.
    """
    assert all(
        splats[i].view_depth <= splats[i + 1].view_depth for i in range(len(splats) - 1)
    ), "splats must be sorted front to back"
    color = np.zeros(3)
    trans = 1.0
    profile = []
    for s in splats:
        a = splat_weight(s, p)
        color += s.color * (a * trans)
        trans *= 1.0 - a
        profile.append(trans)
    color = np.clip(color, 0.0, 1.0)
    if return_transmittance:
        return color, np.array(profile)
    return color


def _sorted_visible(gaussians, cam):
    if not gaussians:
        return None
    means = np.stack([g.mean for g in gaussians])
    covs = np.stack([g.covariance for g in gaussians])
    mean2d, cov2d, depth, visible = project_gaussians(means, covs, cam)
    det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] ** 2
    visible &= det > 0
    idx = np.flatnonzero(visible)
    order = idx[np.lexsort((idx, depth[idx]))]
    return order, mean2d, cov2d, depth


def sorted_projections(gaussians, cam):
    """Visible primitives projected and sorted by (depth, index)."""
    res = _sorted_visible(gaussians, cam)
    if res is None:
        return []
    order, mean2d, cov2d, depth = res
    return [
        ProjectedGaussian(mean2d[i], cov2d[i], float(depth[i]), float(gaussians[i].opacity),
                          gaussians[i].color, int(i))
        for i in order
    ]


def render_image(gaussians, cam, background=(0.0, 0.0, 0.0), footprint=FOOTPRINT_SIGMAS):
    """Rasterize primitives into an (height, width, 3) float image.

    Each splat touches only pixels inside the square of half-width
    ``ceil(footprint * sqrt(largest eigenvalue))`` around its center.
    ``footprint=None`` disables the cutoff.
    """
    H, W = int(cam.height), int(cam.width)
    image = np.zeros((H, W, 3))
    trans = np.ones((H, W))
    res = _sorted_visible(list(gaussians), cam)
    if res is not None:
        order, mean2d, cov2d, _ = res
        for i in order:
            g = gaussians[i]
            c = cov2d[i]
            cx, cy = mean2d[i]
            if footprint is None:
                x0, x1, y0, y1 = 0, W, 0, H
            else:
                lam = 0.5 * (c[0, 0] + c[1, 1]) + math.sqrt(
                    0.25 * (c[0, 0] - c[1, 1]) ** 2 + c[0, 1] ** 2
                )
                r = math.ceil(footprint * math.sqrt(lam))
                x0, x1 = max(int(math.floor(cx - r)), 0), min(int(math.ceil(cx + r)) + 1, W)
                y0, y1 = max(int(math.floor(cy - r)), 0), min(int(math.ceil(cy + r)) + 1, H)
                if x0 >= x1 or y0 >= y1:
                    continue
            inv = np.linalg.inv(c)
            dx = np.arange(x0, x1) - cx
            dy = np.arange(y0, y1)[:, None] - cy
            power = -0.5 * (inv[0, 0] * dx * dx + 2 * inv[0, 1] * dx * dy + inv[1, 1] * dy * dy)
            alpha = np.clip(g.opacity * np.exp(power), 0.0, MAX_ALPHA)
            T = trans[y0:y1, x0:x1]
            image[y0:y1, x0:x1] += (alpha * T)[..., None] * g.color
            trans[y0:y1, x0:x1] = T * (1.0 - alpha)
    image += trans[..., None] * np.asarray(background, dtype=float)
    return np.clip(image, 0.0, 1.0)


def jacobian_check(g, cam, step=1e-4):
    """Max relative error of the analytic projection Jacobian vs central differences."""
    if not step > 0:
        raise InvalidInputError("step must be positive")
    t = cam.rotation @ g.mean + cam.translation
    if t[2] <= NEAR_PLANE:
        raise InvalidInputError("primitive is behind the near plane")
    J = _projection_jacobian(t, cam.fx, cam.fy)

    def proj(v):
        return np.array([cam.fx * v[0] / v[2] + cam.cx, cam.fy * v[1] / v[2] + cam.cy])

    num = np.empty((2, 3))
    for k in range(3):
        e = np.zeros(3)
        e[k] = step
        num[:, k] = (proj(t + e) - proj(t - e)) / (2 * step)
    return float(np.max(np.abs(num - J)) / np.max(np.abs(J)))


def points_to_gaussians(cloud, radius=0.05, opacity=0.8):
    """One isotropic primitive per point, colored from the cloud."""
    colors = np.asarray(cloud.colors, dtype=float) / 255.0
    return [
        GaussianPrimitive(p, scale=np.full(3, radius), opacity=opacity, color=c)
        for p, c in zip(cloud.points, colors)
    ]


def to_uint8(image):
    return np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)


def write_ppm(image, sink):
    """Binary P6 PPM, 8 bits per channel."""
    img = to_uint8(image)
    h, w = img.shape[:2]
    sink.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
    sink.write(img.tobytes())


def write_png(image, sink):
    from PIL import Image

    Image.fromarray(to_uint8(image), mode="RGB").save(sink, format="PNG")
