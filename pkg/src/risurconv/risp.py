"""Rotation-invariant surface properties of K-point neighbourhoods.

For every neighbour ``x_i`` of a reference point ``p`` the two triangles
``(p, x_i, x_{i-1})`` and ``(p, x_i, x_{i+1})`` are formed from the neighbours
adjacent to ``x_i`` in distance order (cyclically). Each row holds one edge
length and thirteen angles between edges, the two triangle normals and the four
point normals. Only lengths and angles enter, so the rows are unchanged by any
rigid motion of the neighbourhood.

Vector convention throughout: the edge "ab" is ``b - a``.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .sampling import Neighborhood

EPS = 1e-12

RISP_COLUMNS = (
    "L0", "phi1", "phi2", "phi3", "phi4", "phi5",
    "alpha1", "alpha2", "beta1", "beta2", "theta1", "theta2", "gamma1", "gamma2",
)
EXTENDED_COLUMNS = RISP_COLUMNS + ("lambda", "mu")

# column groups toggled by the ablation variants
_EUCLID = {"phi1", "phi2", "phi3", "phi4", "phi5"}
_TANGENT = {"alpha1", "alpha2", "beta1", "beta2", "theta1", "theta2", "gamma1", "gamma2"}
_SECOND_TRIANGLE = {"phi2", "phi4", "phi5", "gamma1", "gamma2"}

VARIANTS = ("standard-14", "extended-16", "distance-off", "angles-only", "euclid-only")


class DegenerateGeometryError(ValueError):
    pass


def angle(u, v) -> float:
    """Angle in [0, pi] between two 3-vectors, via atan2(|u x v|, u . v)."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if np.linalg.norm(u) <= EPS or np.linalg.norm(v) <= EPS:
        raise DegenerateGeometryError("angle with a zero-length vector")
    return float(np.arctan2(np.linalg.norm(np.cross(u, v)), np.dot(u, v)))


# Vectors inside the vectorised core are component-first: anything indexable as
# v[0], v[1], v[2] (a (3, ...) array or a tuple of arrays). This keeps every
# operation an elementwise ufunc on contiguous blocks.


def _cross(a, b):
    return (a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0])


def _dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


def _norm(a):
    return np.sqrt(_dot(a, a))


def _angles_n(u, nu, v, nv, counter=None) -> np.ndarray:
    """Angle between component-first vectors with known norms; 0 if either is zero-length."""
    out = np.arctan2(_norm(_cross(u, v)), _dot(u, v))
    bad = (nu <= EPS) | (nv <= EPS)
    if bad.any():
        if counter is not None:
            counter[0] += int(bad.sum())
        out[bad] = 0.0
    return out


def _angles(u: np.ndarray, v: np.ndarray, counter: list | None = None) -> np.ndarray:
    """Row-wise angle over the last axis of (..., 3) arrays; zero-length inputs give 0."""
    u = np.moveaxis(np.asarray(u, dtype=np.float64), -1, 0)
    v = np.moveaxis(np.asarray(v, dtype=np.float64), -1, 0)
    return np.asarray(_angles_n(u, _norm(u), v, _norm(v), counter))


def adjacent_neighbors(nbhd_or_k, i: int, offset: int = 1) -> tuple[int, int]:
    """Slots adjacent to slot ``i`` in distance order, wrapping at both ends."""
    k = nbhd_or_k.k if isinstance(nbhd_or_k, Neighborhood) else int(nbhd_or_k)
    if k < 3:
        raise ValueError(f"adjacency needs K >= 3, got {k}")
    if not 0 <= i < k:
        raise IndexError(f"slot {i} outside 0..{k - 1}")
    return (i - offset) % k, (i + offset) % k


@dataclass(frozen=True)
class TriangleFrame:
    p: np.ndarray
    x_i: np.ndarray
    x_prev: np.ndarray
    x_next: np.ndarray
    n_p: np.ndarray
    n_i: np.ndarray
    n_prev: np.ndarray
    n_next: np.ndarray


def build_frames(nbhd: Neighborhood) -> list[TriangleFrame]:
    if nbhd.normals is None:
        raise ValueError("neighbourhood has no normals; estimate them first")
    k = nbhd.k
    x = nbhd.neighbors
    n = nbhd.neighbor_normals
    frames = []
    for i in range(k):
        a, b = adjacent_neighbors(k, i)
        frames.append(TriangleFrame(nbhd.reference, x[i], x[a], x[b],
                                    nbhd.reference_normal, n[i], n[a], n[b]))
    return frames


def _column_selection(variant: str, surfaces: int) -> list[str]:
    if variant not in VARIANTS:
        raise ValueError(f"unknown RISP variant {variant!r}")
    if surfaces not in (1, 2, 3, 4):
        raise ValueError("surfaces must be 1, 2, 3 or 4")
    cols = list(EXTENDED_COLUMNS if variant == "extended-16" else RISP_COLUMNS)
    if variant == "distance-off":
        cols.remove("L0")
    elif variant == "angles-only":
        cols = [c for c in cols if c in _TANGENT]
    elif variant == "euclid-only":
        cols = [c for c in cols if c == "L0" or c in _EUCLID]
    if surfaces == 1:
        cols = [c for c in cols if c not in _SECOND_TRIANGLE and c != "lambda"]
    for extra in range(3, surfaces + 1):
        tag = f"s{extra}"
        cols += [f"{tag}_phi_a", f"{tag}_phi_b", f"{tag}_dihedral", f"{tag}_n_edge", f"{tag}_n_ref"]
    return cols


def column_names(variant: str = "standard-14", surfaces: int = 2) -> list[str]:
    """Names of the feature columns produced for a variant and surface count."""
    return _column_selection(variant, surfaces)


def _risp_core(points, normals, ref_idx, nbr_idx, variant="standard-14", surfaces=2):
    """Vectorised descriptor for many neighbourhoods.

    points/normals: (n, 3); ref_idx: (...,); nbr_idx: (..., K). Returns
    (values (..., K, C), column names, degeneracy count).
    """
    cols = _column_selection(variant, surfaces)
    nbr_idx = np.asarray(nbr_idx)
    k = nbr_idx.shape[-1]
    need = 3 if surfaces <= 2 else 5
    if k < need:
        raise ValueError(f"{surfaces} surfaces need K >= {need}, got {k}")
    pts_t = np.ascontiguousarray(points.T)   # (3, n)
    nrm_t = np.ascontiguousarray(normals.T)
    ref_idx = np.asarray(ref_idx)
    p = pts_t[:, ref_idx][..., None]          # (3, ..., 1)
    n_p = np.broadcast_to(nrm_t[:, ref_idx][..., None], (3,) + nbr_idx.shape)
    x = pts_t[:, nbr_idx]                     # (3, ..., K)
    nx = nrm_t[:, nbr_idx]
    prev = np.roll(x, 1, axis=-1)
    nxt = np.roll(x, -1, axis=-1)
    n_prev = np.roll(nx, 1, axis=-1)
    n_next = np.roll(nx, -1, axis=-1)

    bad = [0]
    # edge vectors ("ab" = b - a) with their lengths, each computed once
    v_ip = p - x          # x_i p
    v_mp = p - prev       # x_{i-1} p
    v_pp = p - nxt        # x_{i+1} p
    v_mi = x - prev       # x_{i-1} x_i
    v_pi = x - nxt        # x_{i+1} x_i
    l_ip = _norm(v_ip)
    l_mp = np.roll(l_ip, 1, axis=-1)
    l_pp = np.roll(l_ip, -1, axis=-1)
    l_mi = _norm(v_mi)
    l_pi = np.roll(l_mi, -1, axis=-1)
    one = np.ones_like(l_ip)  # normals are unit length

    def ang(u, nu, v, nv):
        return _angles_n(u, nu, v, nv, bad)

    want = set(cols)
    out = {}
    out["L0"] = l_ip
    out["phi1"] = ang(v_mp, l_mp, v_ip, l_ip)
    out["phi2"] = ang(v_pp, l_pp, v_ip, l_ip)
    out["phi3"] = ang(v_mi, l_mi, v_mp, l_mp)
    out["phi4"] = ang(v_pp, l_pp, v_pi, l_pi)
    if "phi5" in want:
        out["phi5"] = _dihedral(v_pp, v_mp, v_ip, bad)
    out["alpha1"] = ang(n_p, one, v_ip, l_ip)
    out["alpha2"] = ang(n_p, one, v_mp, l_mp)
    out["beta1"] = ang(nx, one, v_ip, l_ip)
    out["beta2"] = ang(nx, one, v_mi, l_mi)
    out["theta1"] = ang(n_prev, one, v_mp, l_mp)
    out["theta2"] = ang(n_prev, one, v_mi, l_mi)
    out["gamma1"] = ang(n_next, one, v_pi, l_pi)
    out["gamma2"] = ang(n_next, one, v_pp, l_pp)
    if variant == "extended-16":
        out["lambda"] = ang(n_p, one, n_next, one)
        out["mu"] = ang(n_p, one, n_prev, one)
    for extra, shift in ((3, 2), (4, -2)):
        if surfaces < extra:
            break
        # third triangle uses x_{i-2}, fourth uses x_{i+2}
        far = np.roll(x, shift, axis=-1)
        n_far = np.roll(nx, shift, axis=-1)
        v_fp = p - far
        v_fi = x - far
        l_fp = np.roll(l_ip, shift, axis=-1)
        l_fi = _norm(v_fi)
        tag = f"s{extra}"
        out[f"{tag}_phi_a"] = ang(v_fp, l_fp, v_ip, l_ip)
        out[f"{tag}_phi_b"] = ang(v_fp, l_fp, v_fi, l_fi)
        out[f"{tag}_dihedral"] = _dihedral(v_fp, v_mp, v_ip, bad)
        out[f"{tag}_n_edge"] = ang(n_far, one, v_fi, l_fi)
        out[f"{tag}_n_ref"] = ang(n_far, one, v_fp, l_fp)
    values = np.stack([out[c] for c in cols], axis=-1)
    return values, cols, bad[0]


def _dihedral(a, b, axis, counter):
    """Angle between (a x axis) and (b x axis); 0 when either triangle is collinear."""
    ca = _cross(a, axis)
    cb = _cross(b, axis)
    ang = np.arctan2(_norm(_cross(ca, cb)), _dot(ca, cb))
    flat = (_norm(ca) < EPS) | (_norm(cb) < EPS)
    if flat.any():
        counter[0] += int(flat.sum())
        ang[flat] = 0.0
    return ang


def risp_features(points, normals, ref_idx, nbr_idx, variant="standard-14", surfaces=2) -> np.ndarray:
    """Descriptor block for many neighbourhoods at once, shape (..., K, C), float64."""
    return _risp_core(np.asarray(points, float), np.asarray(normals, float),
                      ref_idx, nbr_idx, variant, surfaces)[0]


@dataclass(frozen=True, eq=False)
class RispMatrix:
    values: np.ndarray
    columns: tuple[str, ...]
    degenerate: int = 0

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[:, self.columns.index(name)]

    @property
    def shape(self):
        return self.values.shape


def risp(nbhd: Neighborhood, variant: str = "standard-14", surfaces: int = 2) -> RispMatrix:
    """K x 14 descriptor for one neighbourhood (columns in ``RISP_COLUMNS`` order)."""
    if nbhd.normals is None:
        raise ValueError("neighbourhood has no normals; estimate them first")
    if nbhd.k < 3:
        raise ValueError(f"adjacency needs K >= 3, got {nbhd.k}")
    values, cols, bad = _risp_core(nbhd.points, nbhd.normals, nbhd.reference_index,
                                   nbhd.neighbor_indices, variant, surfaces)
    return RispMatrix(values, tuple(cols), bad)


def extended_risp(nbhd: Neighborhood) -> RispMatrix:
    """Standard descriptor plus angle(n_p, n_{i+1}) and angle(n_p, n_{i-1}) columns."""
    return risp(nbhd, variant="extended-16")


def tetrahedron_mu(phi2: float, phi4: float, phi5: float, beta1: float) -> float:
    """Angle between n_i and the edge x_i -> x_{i+1} predicted from four descriptor angles.

    Spherical law of cosines at ``x_i``; the prediction is exact when ``n_i`` lies in
    the half-plane of the first triangle that contains ``x_{i-1}``.
    """
    for v in (phi2, phi4, phi5, beta1):
        if not 0.0 <= v <= np.pi:
            raise ValueError("angles must lie in [0, pi]")
    if phi2 + phi4 >= np.pi:
        raise DegenerateGeometryError("phi2 + phi4 >= pi: second triangle is degenerate")
    phi6 = np.pi - phi2 - phi4
    c = np.cos(phi6) * np.cos(beta1) + np.sin(phi6) * np.sin(beta1) * np.cos(phi5)
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


# --------------------------------------------------------------------------- congruence


class Congruence(str, enum.Enum):
    CONGRUENT = "congruent"
    NOT_CONGRUENT = "not-congruent"


def _congruence_points(nbhd: Neighborhood) -> np.ndarray:
    ids = np.concatenate([[nbhd.reference_index], nbhd.neighbor_indices])
    pts = nbhd.points[ids]
    if nbhd.normals is None:
        return pts
    return np.vstack([pts, pts + nbhd.normals[ids]])


def procrustes_residual(a: np.ndarray, b: np.ndarray, allow_reflection: bool = False) -> float:
    """Max point residual after optimally rotating centred ``b`` onto centred ``a``."""
    a = a - a.mean(axis=0)
    b = b - b.mean(axis=0)
    u, _, vt = np.linalg.svd(b.T @ a)
    d = np.ones(3)
    if not allow_reflection and np.linalg.det(u @ vt) < 0:
        d[2] = -1.0
    r = (u * d) @ vt
    return float(np.max(np.linalg.norm(b @ r - a, axis=1)))


def congruence_oracle(nbhd_a: Neighborhood, nbhd_b: Neighborhood, tol: float = 1e-6) -> Congruence:
    """Whether a proper rotation maps ``b`` (points and normal tips, slot by slot) onto ``a``."""
    if nbhd_a.k != nbhd_b.k:
        raise ValueError("neighbourhoods must have the same K")
    res = procrustes_residual(_congruence_points(nbhd_a), _congruence_points(nbhd_b))
    return Congruence.CONGRUENT if res < tol else Congruence.NOT_CONGRUENT


def is_mirror_image(nbhd_a: Neighborhood, nbhd_b: Neighborhood, tol: float = 1e-6) -> bool:
    """True when ``b`` matches ``a`` only through an improper (reflecting) orthogonal map."""
    a, b = _congruence_points(nbhd_a), _congruence_points(nbhd_b)
    return (procrustes_residual(a, b, allow_reflection=True) < tol
            and procrustes_residual(a, b) >= tol)


# --------------------------------------------------------------------------- feature dump

_MAGIC = b"RISP"
_VERSION = 1


def write_feature_dump(path, features: np.ndarray) -> None:
    """Write an (M, K, C) block: magic, u32 version/M/K/C, then float32 row-major, little-endian."""
    features = np.asarray(features)
    if features.ndim != 3:
        raise ValueError("features must have shape (M, K, C)")
    m, k, c = features.shape
    with open(path, "wb") as fh:
        fh.write(_MAGIC + struct.pack("<IIII", _VERSION, m, k, c))
        fh.write(np.ascontiguousarray(features, dtype="<f4").tobytes())


def read_feature_dump(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError("not a RISP feature dump")
    version, m, k, c = struct.unpack("<IIII", raw[4:20])
    if version != _VERSION:
        raise ValueError(f"unsupported feature dump version {version}")
    data = np.frombuffer(raw, dtype="<f4", offset=20)
    if data.size != m * k * c:
        raise ValueError("feature dump is truncated")
    return data.reshape(m, k, c).astype(np.float32)
