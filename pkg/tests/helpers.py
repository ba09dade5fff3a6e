"""Random geometry shared by the unit and acceptance tests."""

import numpy as np

from risurconv.sampling import Neighborhood


def unit(v):
    v = np.asarray(v, float)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def random_neighborhood(rng, k=8, spread=1.0):
    """Reference at the origin-ish, ``k`` neighbours sorted by distance, random unit normals."""
    p = rng.normal(size=3)
    x = p + rng.normal(scale=spread, size=(k, 3))
    x = x[np.argsort(np.linalg.norm(x - p, axis=1))]
    n = unit(rng.normal(size=(k + 1, 3)))
    return Neighborhood.from_arrays(p, x, n[0], n[1:])


def rotated(nbhd, r):
    """Apply a 3x3 rotation to positions and normals of a neighbourhood."""
    return Neighborhood(nbhd.reference_index, nbhd.neighbor_indices,
                        nbhd.points @ r.T, None if nbhd.normals is None else nbhd.normals @ r.T)


def shifted(nbhd, offset):
    return Neighborhood(nbhd.reference_index, nbhd.neighbor_indices, nbhd.points + offset, nbhd.normals)


def angle_acos(u, v):
    """Second implementation path: clamped arccos of the normalised dot product."""
    u = np.asarray(u, float)
    v = np.asarray(v, float)
    c = np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v))
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def risp_by_definition(nbhd, extended=False):
    """Row-by-row descriptor written straight from the defining formulas, acos based."""
    k = nbhd.k
    p = nbhd.reference
    n_p = nbhd.reference_normal
    x = nbhd.neighbors
    nx = nbhd.neighbor_normals
    rows = []
    for i in range(k):
        xm, xp = x[(i - 1) % k], x[(i + 1) % k]
        nm, nn = nx[(i - 1) % k], nx[(i + 1) % k]
        xi, ni = x[i], nx[i]
        ip, mp, pp = p - xi, p - xm, p - xp
        mi, pi_ = xi - xm, xi - xp
        row = [
            np.linalg.norm(ip),
            angle_acos(mp, ip), angle_acos(pp, ip), angle_acos(mi, mp), angle_acos(pp, pi_),
            angle_acos(np.cross(pp, ip), np.cross(mp, ip)),
            angle_acos(n_p, ip), angle_acos(n_p, mp),
            angle_acos(ni, ip), angle_acos(ni, mi),
            angle_acos(nm, mp), angle_acos(nm, mi),
            angle_acos(nn, pi_), angle_acos(nn, pp),
        ]
        if extended:
            row += [angle_acos(n_p, nn), angle_acos(n_p, nm)]
        rows.append(row)
    return np.array(rows)


def half_plane_frame(rng):
    """Random (p, x_i, x_prev, x_next, n_i) with n_i in the plane of triangle (p, x_i, x_prev),
    on the x_prev side of the line x_i p. Returns None for near-degenerate draws."""
    p, xi, xm, xp = rng.normal(size=(4, 3))
    u = unit(p - xi)
    w = (xm - xi) - np.dot(xm - xi, u) * u
    if np.linalg.norm(w) < 1e-3:
        return None
    w = unit(w)
    t = rng.uniform(0.0, np.pi)
    ni = np.cos(t) * u + np.sin(t) * w
    return p, xi, xm, xp, ni
