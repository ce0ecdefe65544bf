"""Procedural 3D shape families and orthographic view descriptors.

Eight parametric surface families stand in for a CAD model corpus. Each
generated cloud gets a random anisotropic scale, a random rotation about the
vertical axis, optional Gaussian surface jitter, and is then centered on its
centroid and scaled so the farthest point sits at unit norm.

The sphere is sampled antithetically (mirrored pairs) so that a jitter-free
sphere survives empirical centering with its radius intact; the remaining
families have no such constraint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError

CLASS_NAMES = (
    "sphere",
    "box",
    "cylinder",
    "cone",
    "torus",
    "capsule",
    "bracket",
    "plate",
)

MIN_POINTS = 64


def _unit_rows(rows):
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def _sample_sphere(rng, n, radius=0.8):
    half = n // 2
    dirs = _unit_rows(rng.normal(size=(half, 3)))
    pts = [radius * dirs, -radius * dirs]
    if n % 2:
        pts.append(radius * _unit_rows(rng.normal(size=(1, 3))))
    return np.concatenate(pts, axis=0)


def _sample_box(rng, n, half_extents, center=(0.0, 0.0, 0.0)):
    a, b, c = half_extents
    # faces: +x, -x, +y, -y, +z, -z with areas 4bc, 4bc, 4ac, 4ac, 4ab, 4ab
    areas = np.array([b * c, b * c, a * c, a * c, a * b, a * b])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    u = rng.uniform(-1.0, 1.0, size=n)
    v = rng.uniform(-1.0, 1.0, size=n)
    pts = np.empty((n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    for ax, (d1, d2) in enumerate(((1, 2), (0, 2), (0, 1))):
        m = axis == ax
        pts[m, ax] = sign[m] * half_extents[ax]
        pts[m, d1] = u[m] * half_extents[d1]
        pts[m, d2] = v[m] * half_extents[d2]
    return pts + np.asarray(center)


def _sample_cylinder(rng, n, radius=0.30, half_height=0.5):
    lateral = 2.0 * np.pi * radius * 2.0 * half_height
    cap = np.pi * radius**2
    comp = rng.choice(3, size=n, p=np.array([lateral, cap, cap]) / (lateral + 2 * cap))
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
    u = rng.uniform(0.0, 1.0, size=n)
    pts = np.empty((n, 3))
    on_side = comp == 0
    pts[on_side, 0] = radius * np.cos(theta[on_side])
    pts[on_side, 1] = radius * np.sin(theta[on_side])
    pts[on_side, 2] = (2.0 * u[on_side] - 1.0) * half_height
    for which, z in ((1, half_height), (2, -half_height)):
        m = comp == which
        rho = radius * np.sqrt(u[m])
        pts[m, 0] = rho * np.cos(theta[m])
        pts[m, 1] = rho * np.sin(theta[m])
        pts[m, 2] = z
    return pts


def _sample_cone(rng, n, radius=0.45, half_height=0.55):
    slant = np.sqrt(radius**2 + (2.0 * half_height) ** 2)
    lateral = np.pi * radius * slant
    base = np.pi * radius**2
    comp = rng.choice(2, size=n, p=np.array([lateral, base]) / (lateral + base))
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
    u = rng.uniform(0.0, 1.0, size=n)
    pts = np.empty((n, 3))
    side = comp == 0
    t = np.sqrt(u[side])  # area-uniform distance fraction from the apex
    pts[side, 0] = t * radius * np.cos(theta[side])
    pts[side, 1] = t * radius * np.sin(theta[side])
    pts[side, 2] = half_height - t * 2.0 * half_height
    m = ~side
    rho = radius * np.sqrt(u[m])
    pts[m, 0] = rho * np.cos(theta[m])
    pts[m, 1] = rho * np.sin(theta[m])
    pts[m, 2] = -half_height
    return pts


def _sample_torus(rng, n, major=0.35, minor=0.30):
    u = rng.uniform(0.0, 2.0 * np.pi, size=n)
    # rejection sampling on the tube angle keeps the surface density uniform
    v = np.empty(n)
    filled = 0
    while filled < n:
        cand = rng.uniform(0.0, 2.0 * np.pi, size=2 * (n - filled))
        accept = rng.uniform(0.0, 1.0, size=cand.size) < (
            (major + minor * np.cos(cand)) / (major + minor)
        )
        kept = cand[accept][: n - filled]
        v[filled : filled + kept.size] = kept
        filled += kept.size
    ring = major + minor * np.cos(v)
    return np.stack([ring * np.cos(u), ring * np.sin(u), minor * np.sin(v)], axis=1)


def _sample_capsule(rng, n, radius=0.30, half_height=0.20):
    lateral = 2.0 * np.pi * radius * 2.0 * half_height
    hemi = 2.0 * np.pi * radius**2
    comp = rng.choice(3, size=n, p=np.array([lateral, hemi, hemi]) / (lateral + 2 * hemi))
    pts = np.empty((n, 3))
    side = comp == 0
    theta = rng.uniform(0.0, 2.0 * np.pi, size=int(side.sum()))
    pts[side, 0] = radius * np.cos(theta)
    pts[side, 1] = radius * np.sin(theta)
    pts[side, 2] = rng.uniform(-half_height, half_height, size=theta.size)
    for which, zsign in ((1, 1.0), (2, -1.0)):
        m = comp == which
        dirs = _unit_rows(rng.normal(size=(int(m.sum()), 3)))
        dirs[:, 2] = zsign * np.abs(dirs[:, 2])
        pts[m] = radius * dirs
        pts[m, 2] += zsign * half_height
    return pts


def _sample_bracket(rng, n):
    # an L-profile with the same outer extents as the box class; the notch is
    # only apparent from a narrow band of azimuths once the shape is rotated
    slabs = (
        ((0.5, 0.36, 0.13), (0.0, 0.0, -0.13)),
        ((0.13, 0.36, 0.13), (-0.37, 0.0, 0.13)),
    )
    areas = []
    for (a, b, c), _ in slabs:
        areas.append(8.0 * (a * b + a * c + b * c))
    areas = np.asarray(areas)
    pick = rng.choice(2, size=n, p=areas / areas.sum())
    pts = np.empty((n, 3))
    for i, (half, center) in enumerate(slabs):
        m = pick == i
        if m.any():
            pts[m] = _sample_box(rng, int(m.sum()), half, center)
    return pts


def _sample_plate(rng, n):
    return _sample_box(rng, n, (0.5, 0.36, 0.05))


_SAMPLERS = (
    _sample_sphere,
    lambda rng, n: _sample_box(rng, n, (0.5, 0.36, 0.26)),
    _sample_cylinder,
    _sample_cone,
    _sample_torus,
    _sample_capsule,
    _sample_bracket,
    _sample_plate,
)


def generate_shape(class_id, seed, n_points, jitter_sigma=0.01, scale_jitter=0.3):
    """Sample one surface cloud, normalized to centroid 0 and max norm 1."""
    if not 0 <= class_id < len(CLASS_NAMES):
        raise InputError(f"unknown class id {class_id}")
    if n_points < MIN_POINTS:
        raise InputError(f"n_points must be >= {MIN_POINTS}, got {n_points}")
    rng = np.random.default_rng(np.random.PCG64(seed))
    pts = _SAMPLERS[class_id](rng, n_points)

    stretch = rng.uniform(1.0 - scale_jitter, 1.0 + scale_jitter, size=3)
    pts = pts * stretch
    angle = rng.uniform(0.0, 2.0 * np.pi)
    ca, sa = np.cos(angle), np.sin(angle)
    rot = np.array([[ca, -sa, 0.0], [sa, ca, 0.0], [0.0, 0.0, 1.0]])
    pts = pts @ rot.T
    pts = pts + jitter_sigma * rng.normal(size=pts.shape)

    pts = pts - pts.mean(axis=0)
    max_norm = np.linalg.norm(pts, axis=1).max()
    if max_norm > 0:
        pts = pts / max_norm
    return pts


@dataclass(frozen=True)
class CameraRig:
    """A horizontal ring of evenly spaced orthographic cameras."""

    view_count: int = 12
    elevation_deg: float = 20.0
    resolution: int = 8

    @property
    def azimuths_deg(self):
        step = 360.0 / self.view_count
        return np.arange(self.view_count) * step

    @property
    def descriptor_dim(self):
        return 3 * self.resolution * self.resolution


def render_view_descriptor(points, azimuth_deg, elevation_deg, resolution):
    """Project a cloud onto one camera's image plane and grid the statistics.

    An RxR grid over [-1, 1]^2 accumulates, per cell, the occupancy count and
    the min and max depth along the camera direction. The three channels are
    flattened to a vector of length 3 R^2 with occupancy scaled by its max and
    depths mapped affinely from [-1, 1] to [0, 1]; empty cells are 0 in every
    channel. Purely deterministic.
    """
    if resolution < 4:
        raise InputError(f"descriptor resolution must be >= 4, got {resolution}")
    pts = np.asarray(points, dtype=np.float64)
    a = np.deg2rad(azimuth_deg)
    e = np.deg2rad(elevation_deg)
    toward = np.array([np.cos(e) * np.cos(a), np.cos(e) * np.sin(a), np.sin(e)])
    right = np.array([-np.sin(a), np.cos(a), 0.0])
    up = np.cross(toward, right)

    u = pts @ right
    v = pts @ up
    depth = pts @ toward

    r = resolution
    iu = np.clip(((u + 1.0) * 0.5 * r).astype(np.intp), 0, r - 1)
    iv = np.clip(((v + 1.0) * 0.5 * r).astype(np.intp), 0, r - 1)
    cell = iv * r + iu

    occupancy = np.bincount(cell, minlength=r * r).astype(np.float64)
    depth_min = np.full(r * r, np.inf)
    depth_max = np.full(r * r, -np.inf)
    np.minimum.at(depth_min, cell, depth)
    np.maximum.at(depth_max, cell, depth)

    filled = occupancy > 0
    occ_channel = occupancy / occupancy.max() if occupancy.max() > 0 else occupancy
    min_channel = np.where(filled, (depth_min + 1.0) * 0.5, 0.0)
    max_channel = np.where(filled, (depth_max + 1.0) * 0.5, 0.0)
    return np.concatenate([occ_channel, min_channel, max_channel])


def render_views(points, rig):
    """Stack one descriptor per camera in the rig, shape (V, 3 R^2)."""
    return np.stack(
        [
            render_view_descriptor(points, az, rig.elevation_deg, rig.resolution)
            for az in rig.azimuths_deg
        ]
    )
