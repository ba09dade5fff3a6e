"""Synthetic primitive-shape dataset with analytic normals, and xyz directory loaders."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..cloud import PointCloud, load_cloud, save_xyz

CLASSES = ("sphere", "box", "cylinder", "cone", "torus")


def _sphere(rng, n):
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v, v.copy()


def _box(rng, n, half=(1.0, 0.7, 0.45)):
    half = np.asarray(half)
    # face pairs normal to x, y, z with areas proportional to the other two extents
    areas = np.array([half[1] * half[2], half[0] * half[2], half[0] * half[1]])
    axis = rng.choice(3, size=n, p=areas / areas.sum())
    sign = rng.choice([-1.0, 1.0], size=n)
    pts = rng.uniform(-1.0, 1.0, size=(n, 3)) * half
    pts[np.arange(n), axis] = sign * half[axis]
    normals = np.zeros((n, 3))
    normals[np.arange(n), axis] = sign
    return pts, normals


def _cylinder(rng, n, radius=0.6, half_height=0.8):
    side = 2 * np.pi * radius * 2 * half_height
    cap = np.pi * radius**2
    part = rng.choice(3, size=n, p=np.array([side, cap, cap]) / (side + 2 * cap))
    theta = rng.uniform(0, 2 * np.pi, size=n)
    r = radius * np.sqrt(rng.uniform(size=n))
    z = rng.uniform(-half_height, half_height, size=n)
    pts = np.empty((n, 3))
    normals = np.zeros((n, 3))
    lat = part == 0
    pts[lat] = np.c_[radius * np.cos(theta[lat]), radius * np.sin(theta[lat]), z[lat]]
    normals[lat] = np.c_[np.cos(theta[lat]), np.sin(theta[lat]), np.zeros(lat.sum())]
    for label, sgn in ((1, 1.0), (2, -1.0)):
        m = part == label
        pts[m] = np.c_[r[m] * np.cos(theta[m]), r[m] * np.sin(theta[m]), np.full(m.sum(), sgn * half_height)]
        normals[m, 2] = sgn
    return pts, normals


def _cone(rng, n, radius=0.8, height=1.6):
    slant = np.hypot(radius, height)
    side = np.pi * radius * slant
    base = np.pi * radius**2
    on_side = rng.uniform(size=n) < side / (side + base)
    theta = rng.uniform(0, 2 * np.pi, size=n)
    t = np.sqrt(rng.uniform(size=n))  # area grows linearly away from the apex
    pts = np.empty((n, 3))
    normals = np.empty((n, 3))
    apex = height / 2
    s = on_side
    pts[s] = np.c_[t[s] * radius * np.cos(theta[s]), t[s] * radius * np.sin(theta[s]), apex - t[s] * height]
    normals[s] = np.c_[height * np.cos(theta[s]), height * np.sin(theta[s]), np.full(s.sum(), radius)] / slant
    b = ~s
    pts[b] = np.c_[t[b] * radius * np.cos(theta[b]), t[b] * radius * np.sin(theta[b]), np.full(b.sum(), -apex)]
    normals[b] = (0.0, 0.0, -1.0)
    return pts, normals


def _torus(rng, n, major=0.8, minor=0.3):
    us, vs = [], []
    while sum(len(u) for u in us) < n:
        u = rng.uniform(0, 2 * np.pi, size=2 * n)
        v = rng.uniform(0, 2 * np.pi, size=2 * n)
        keep = rng.uniform(size=2 * n) < (major + minor * np.cos(v)) / (major + minor)
        us.append(u[keep])
        vs.append(v[keep])
    u = np.concatenate(us)[:n]
    v = np.concatenate(vs)[:n]
    normals = np.c_[np.cos(v) * np.cos(u), np.cos(v) * np.sin(u), np.sin(v)]
    pts = np.c_[(major + minor * np.cos(v)) * np.cos(u), (major + minor * np.cos(v)) * np.sin(u), minor * np.sin(v)]
    return pts, normals


_SAMPLERS = {"sphere": _sphere, "box": _box, "cylinder": _cylinder, "cone": _cone, "torus": _torus}


def sample_shape(name: str, n_points: int, rng: np.random.Generator, noise_sigma: float = 0.0,
                 scale: float = 1.0, label: int | None = None) -> PointCloud:
    pts, normals = _SAMPLERS[name](rng, n_points)
    pts = pts * scale
    if noise_sigma > 0:
        pts = pts + rng.normal(scale=noise_sigma, size=pts.shape)
    normals = normals / np.linalg.norm(normals, axis=1, keepdims=True)
    return PointCloud(pts, normals, label)


def synth_dataset(classes=CLASSES, per_class: int = 50, noise_sigma: float = 0.01, seed: int = 0,
                  n_points: int = 1024) -> list[PointCloud]:
    """Labelled surface samples of primitive shapes, ``per_class`` clouds per class.

    Each cloud has a random overall scale in [0.8, 1.2] and Gaussian coordinate
    noise; normals are the exact surface normals. Labels index ``classes``.
    """
    if per_class < 1:
        raise ValueError("per_class must be at least 1")
    classes = tuple(classes)
    unknown = [c for c in classes if c not in _SAMPLERS]
    if unknown:
        raise ValueError(f"unknown shape classes: {unknown}")
    rng = np.random.default_rng(seed)
    out = []
    for label, name in enumerate(classes):
        for _ in range(per_class):
            scale = rng.uniform(0.8, 1.2)
            out.append(sample_shape(name, n_points, rng, noise_sigma, scale, label))
    return out


def save_dataset(clouds, directory) -> list[Path]:
    """Write one ``<index>_<label>.xyz`` file per cloud (6 columns when normals exist)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, c in enumerate(clouds):
        p = directory / f"{i:05d}_{-1 if c.label is None else c.label}.xyz"
        save_xyz(c, p)
        paths.append(p)
    return paths


def load_dataset(directory) -> list[PointCloud]:
    """Read every ``*.xyz`` in ``directory``; labels come from the ``_<label>`` filename suffix."""
    clouds = []
    for p in sorted(Path(directory).glob("*.xyz")):
        c = load_cloud(p, "xyz-ascii")
        stem = p.stem.rsplit("_", 1)
        label = int(stem[1]) if len(stem) == 2 and stem[1].lstrip("-").isdigit() else None
        if label is not None and label < 0:
            label = None
        clouds.append(PointCloud(c.points, c.normals, label))
    return clouds
