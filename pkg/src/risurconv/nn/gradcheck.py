"""Central finite-difference gradient checks.

The analytic gradient comes from the tape at the working precision (float32).
The finite-difference side re-evaluates the same loss with every parameter
promoted to float64, so the oracle's own rounding noise stays far below the
tolerances being checked.
"""

from __future__ import annotations

import numpy as np

from .tensor import default_dtype


def numeric_grad(f, arr: np.ndarray, eps: float = 1e-3, entries=None) -> np.ndarray:
    """d f() / d arr by central differences; ``arr`` is perturbed in place and restored.

    ``entries`` limits the check to a subset of flat indices (others stay 0).
    """
    grad = np.zeros(arr.shape, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size) if entries is None else entries:
        old = flat[i]
        flat[i] = old + eps
        plus = float(f())
        flat[i] = old - eps
        minus = float(f())
        flat[i] = old
        gflat[i] = (plus - minus) / (2 * eps)
    return grad


def relative_error(analytic, numeric, floor: float = 0.0) -> float:
    """||a - n|| / max(||a||, ||n||, floor).

    ``floor`` keeps gradients that are zero by construction (e.g. a bias feeding
    a batch norm) from turning rounding residue into an O(1) ratio.
    """
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    denom = max(np.linalg.norm(a), np.linalg.norm(n), floor, 1e-30)
    return float(np.linalg.norm(a - n) / denom)


def check_gradients(loss_fn, params, eps: float = 1e-4, max_entries: int | None = None,
                    seed: int = 0, floor_ratio: float = 1e-3) -> dict[int, float]:
    """Compare tape gradients of ``loss_fn()`` against central differences.

    ``loss_fn`` must rebuild the graph on each call. Returns ``{index: relative
    error}`` per parameter. The error floor is ``floor_ratio`` times the largest
    per-entry gradient norm seen across all parameters.
    """
    rng = np.random.default_rng(seed)
    for p in params:
        p.grad = None
    loss_fn().backward()
    analytic = [np.zeros(p.shape) if p.grad is None else p.grad.astype(np.float64) for p in params]

    originals = [p.data for p in params]
    picks, numeric = [], []
    try:
        for p in params:
            p.data = p.data.astype(np.float64)
        with default_dtype(np.float64):
            for p in params:
                entries = None
                if max_entries is not None and p.data.size > max_entries:
                    entries = rng.choice(p.data.size, size=max_entries, replace=False)
                picks.append(entries)
                numeric.append(numeric_grad(lambda: loss_fn().data.sum(), p.data, eps, entries))
    finally:
        for p, orig in zip(params, originals):
            p.data = orig

    pairs = []
    for a, n, entries in zip(analytic, numeric, picks):
        a, n = a.reshape(-1), n.reshape(-1)
        if entries is not None:
            a, n = a[entries], n[entries]
        pairs.append((a, n))
    scale = max((np.linalg.norm(a) / np.sqrt(a.size) for a, _ in pairs if a.size), default=0.0)
    floor_fn = lambda a: floor_ratio * scale * np.sqrt(a.size)  # noqa: E731
    return {i: relative_error(a, n, floor_fn(a)) for i, (a, n) in enumerate(pairs)}
