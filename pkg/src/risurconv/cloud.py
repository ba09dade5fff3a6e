"""Point clouds, file ingest, rigid rotations and normal estimation."""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation as _ScipyRotation

NORMAL_TOL = 1e-6
ROTATION_TOL = 1e-9


class CloudFormatError(ValueError):
    """Raised when a point cloud file cannot be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    normals: np.ndarray | None = None
    label: int | None = None
    # indices of points whose normal came from a degenerate (coincident) neighbourhood
    degenerate: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (n, 3), got {pts.shape}")
        object.__setattr__(self, "points", pts)
        if self.normals is not None:
            nrm = np.ascontiguousarray(self.normals, dtype=np.float64)
            if nrm.shape != pts.shape:
                raise ValueError(f"normals shape {nrm.shape} does not match points {pts.shape}")
            lengths = np.linalg.norm(nrm, axis=1)
            if np.any(np.abs(lengths - 1.0) > NORMAL_TOL):
                raise ValueError("normals must be unit length")
            object.__setattr__(self, "normals", nrm)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def has_normals(self) -> bool:
        return self.normals is not None

    def permuted(self, order: np.ndarray) -> "PointCloud":
        """Same cloud with point storage reordered by ``order``."""
        order = np.asarray(order)
        return PointCloud(
            self.points[order],
            None if self.normals is None else self.normals[order],
            self.label,
        )


@dataclass(frozen=True, eq=False)
class Rotation:
    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64)
        if m.shape != (3, 3):
            raise ValueError(f"rotation matrix must be 3x3, got {m.shape}")
        if np.max(np.abs(m @ m.T - np.eye(3))) > ROTATION_TOL:
            raise ValueError("rotation matrix is not orthogonal")
        if abs(np.linalg.det(m) - 1.0) > ROTATION_TOL:
            raise ValueError("rotation matrix must have determinant +1")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "Rotation":
        return cls(np.eye(3))

    @property
    def T(self) -> "Rotation":
        return Rotation(self.matrix.T)


def random_rotation(mode: str, rng_seed: int) -> Rotation:
    """Draw a rotation about the z axis (``"z"``) or uniformly from SO(3) (``"so3"``)."""
    mode = mode.lower().replace("-axis", "")
    if mode == "z":
        theta = np.random.default_rng(rng_seed).uniform(0.0, 2.0 * np.pi)
        c, s = np.cos(theta), np.sin(theta)
        return Rotation(np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]))
    if mode == "so3":
        return Rotation(_ScipyRotation.random(random_state=np.random.default_rng(rng_seed)).as_matrix())
    if mode == "none":
        return Rotation.identity()
    raise ValueError(f"unknown rotation mode {mode!r}")


def apply_rotation(cloud: PointCloud, r: Rotation) -> PointCloud:
    m = r.matrix
    if np.array_equal(m, np.eye(3)):
        return cloud
    normals = None if cloud.normals is None else cloud.normals @ m.T
    if normals is not None:
        # re-normalise to keep the unit invariant exact under accumulated rounding
        normals = normals / np.linalg.norm(normals, axis=1, keepdims=True)
    return PointCloud(cloud.points @ m.T, normals, cloud.label)


# --------------------------------------------------------------------------- I/O


def _parse_floats(tokens, lineno):
    try:
        return [float(t) for t in tokens]
    except ValueError as exc:
        raise CloudFormatError(f"cannot parse number ({exc})", lineno) from None


def _load_xyz(text: str) -> PointCloud:
    rows = []
    width = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].replace(",", " ").strip()
        if not line:
            continue
        values = _parse_floats(line.split(), lineno)
        if len(values) not in (3, 6):
            raise CloudFormatError(f"expected 3 or 6 values, got {len(values)}", lineno)
        if width is None:
            width = len(values)
        elif len(values) != width:
            raise CloudFormatError(
                f"dimension mismatch: expected {width} values, got {len(values)}", lineno
            )
        rows.append(values)
    if not rows:
        raise CloudFormatError("file contains no points")
    data = np.array(rows, dtype=np.float64)
    if width == 6:
        return PointCloud(data[:, :3], _unit(data[:, 3:]))
    return PointCloud(data)


def _unit(normals: np.ndarray) -> np.ndarray:
    lengths = np.linalg.norm(normals, axis=1, keepdims=True)
    if np.any(lengths == 0):
        raise CloudFormatError("zero-length normal")
    return normals / lengths


def _load_off(text: str) -> PointCloud:
    lines = [
        (i, ln.split("#", 1)[0].strip())
        for i, ln in enumerate(text.splitlines(), start=1)
    ]
    lines = [(i, ln) for i, ln in lines if ln]
    if not lines:
        raise CloudFormatError("empty OFF file")
    lineno, head = lines[0]
    m = re.match(r"([A-Z]*OFF)(.*)$", head)
    if m is None:
        raise CloudFormatError("missing OFF header", lineno)
    keyword, rest = m.group(1), m.group(2).strip()
    has_normals = "N" in keyword[:-3]
    body = lines[1:]
    if not rest:
        if not body:
            raise CloudFormatError("missing vertex/face counts", lineno)
        lineno, rest = body[0]
        body = body[1:]
    counts = rest.split()
    try:
        n_vertices = int(counts[0])
    except (ValueError, IndexError):
        raise CloudFormatError("malformed vertex count", lineno) from None
    if len(body) < n_vertices:
        raise CloudFormatError(f"expected {n_vertices} vertices, found {len(body)}")
    width = 6 if has_normals else 3
    rows = []
    for lineno, line in body[:n_vertices]:
        values = _parse_floats(line.split(), lineno)
        if len(values) < width:
            raise CloudFormatError(f"expected {width} values, got {len(values)}", lineno)
        rows.append(values[:width])
    if not rows:
        raise CloudFormatError("OFF file has no vertices")
    data = np.array(rows, dtype=np.float64)
    if has_normals:
        return PointCloud(data[:, :3], _unit(data[:, 3:]))
    return PointCloud(data)


def load_cloud(path, format: str | None = None) -> PointCloud:
    """Read an ASCII xyz (3 or 6 columns) or OFF file.

    ``format`` is ``"xyz-ascii"`` or ``"off"``; when omitted it is inferred from
    the file suffix.
    """
    path = Path(path)
    if format is None:
        format = "off" if path.suffix.lower() == ".off" else "xyz-ascii"
    text = path.read_text(encoding="utf-8")
    if format in ("xyz", "xyz-ascii"):
        return _load_xyz(text)
    if format == "off":
        return _load_off(text)
    raise ValueError(f"unsupported format {format!r}")


def save_xyz(cloud: PointCloud, path) -> None:
    data = cloud.points if cloud.normals is None else np.hstack([cloud.points, cloud.normals])
    header = "" if cloud.label is None else f"label {cloud.label}"
    np.savetxt(path, data, fmt="%.17g", header=header)


# --------------------------------------------------------------------------- normals


def _weighted_normals(neigh: np.ndarray, dists: np.ndarray, weighting: str):
    """Per-neighbourhood smallest-eigenvalue eigenvectors.

    neigh: (n, k, 3) neighbour coordinates, dists: (n, k) distances to the query.
    """
    radius = dists.max(axis=1, keepdims=True)
    degenerate = radius[:, 0] <= 1e-12
    safe_r = np.where(degenerate[:, None], 1.0, radius)
    if weighting == "linear":
        w = (safe_r - dists) / safe_r
    elif weighting == "uniform":
        w = np.ones_like(dists)
    else:
        raise ValueError(f"unknown weighting {weighting!r}")
    w_sum = w.sum(axis=1, keepdims=True)
    centroid = (w[..., None] * neigh).sum(axis=1) / w_sum
    centered = neigh - centroid[:, None, :]
    cov = np.einsum("nk,nki,nkj->nij", w, centered, centered) / w_sum[..., None]
    _, vecs = np.linalg.eigh(cov)
    return vecs[:, :, 0], neigh.mean(axis=1), degenerate


def _orient(normals: np.ndarray, points: np.ndarray, centroids: np.ndarray, scale: np.ndarray):
    offset = points - centroids
    dots = np.einsum("ni,ni->n", normals, offset)
    # dot products at rounding level of the neighbourhood size count as zero
    zero = np.abs(dots) <= 1e-9 * np.maximum(scale, 1e-300)
    flip = (dots < 0) & ~zero
    # tie rule: first nonzero component, in z, x, y order, is positive
    comps = normals[:, [2, 0, 1]]
    nonzero = np.abs(comps) > 1e-12
    first = np.argmax(nonzero, axis=1)
    lead = comps[np.arange(len(comps)), first]
    flip |= zero & (lead < 0)
    return np.where(flip[:, None], -normals, normals)


def estimate_normals(cloud: PointCloud, k: int = 16, weighting: str = "linear") -> PointCloud:
    """Unit normals from the distance-weighted covariance of each point's k nearest points.

    The k nearest points include the query itself. Weights fall off linearly,
    ``(r - d) / r`` with ``r`` the farthest neighbour distance; ``weighting="uniform"``
    gives plain PCA. Neighbourhoods whose points all coincide get ``(0, 0, 1)`` and are
    listed in ``PointCloud.degenerate``.
    """
    n = len(cloud)
    if k < 3:
        raise ValueError("k must be at least 3")
    if n < k:
        raise ValueError(f"cloud has {n} points, fewer than k={k}")
    pts = cloud.points
    _, idx = cKDTree(pts).query(pts, k=k)
    idx = idx.reshape(n, k)
    neigh = pts[idx]
    dists = np.sqrt(((neigh - pts[:, None, :]) ** 2).sum(axis=2))
    normals, centroids, degenerate = _weighted_normals(neigh, dists, weighting)
    normals = _orient(normals, pts, centroids, dists.max(axis=1))
    normals[degenerate] = (0.0, 0.0, 1.0)
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return replace(cloud, normals=normals, degenerate=np.flatnonzero(degenerate))
