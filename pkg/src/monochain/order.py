"""Order-cone algebra for the nonnegative orthant in R^n.

``x <= y`` iff ``y - x`` lies in the closed orthant, ``x << y`` iff it lies in
the interior.  A :class:`ConeOrder` can be *reversed*, which swaps the roles
of up and down; that is all the dual statements need.
"""
from __future__ import annotations

from dataclasses import dataclass
import numpy as np

from .errors import UsageError

__all__ = [
    "ConeOrder",
    "as_vec",
    "cone_leq",
    "cone_ll",
    "is_unordered",
    "ordered_pair",
    "order_interval_contains",
    "order_hull_contains",
    "cone_boundary_distance",
    "boxes_comparable",
]


@dataclass(frozen=True)
class ConeOrder:
    dimension: int | None = None
    strict_margin: float = 0.0
    reversed: bool = False

    def __post_init__(self):
        if self.strict_margin < 0 or not np.isfinite(self.strict_margin):
            raise UsageError("strict_margin must be a finite nonnegative number")
        if self.dimension is not None and self.dimension < 1:
            raise UsageError("dimension must be positive")

    @property
    def sign(self) -> float:
        return -1.0 if self.reversed else 1.0

    def with_margin(self, margin: float) -> "ConeOrder":
        return ConeOrder(self.dimension, float(margin), self.reversed)

    def dual(self) -> "ConeOrder":
        return ConeOrder(self.dimension, self.strict_margin, not self.reversed)


DEFAULT_ORDER = ConeOrder()


def as_vec(x, dimension: int | None = None) -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise UsageError(f"expected a nonempty 1-d vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise UsageError("vector has non-finite coordinates")
    if dimension is not None and v.size != dimension:
        raise UsageError(f"expected dimension {dimension}, got {v.size}")
    return v


def _pair(x, y, order: ConeOrder) -> tuple[np.ndarray, np.ndarray]:
    a = as_vec(x, order.dimension)
    b = as_vec(y, order.dimension)
    if a.size != b.size:
        raise UsageError(f"dimension mismatch: {a.size} vs {b.size}")
    return a, b


def cone_leq(x, y, order: ConeOrder = DEFAULT_ORDER) -> bool:
    """Exact ``x <= y``; the margin is ignored."""
    a, b = _pair(x, y, order)
    return bool(np.all(order.sign * (b - a) >= 0))


def cone_ll(x, y, order: ConeOrder = DEFAULT_ORDER) -> bool:
    """``x << y``: every coordinate gap exceeds ``order.strict_margin``."""
    a, b = _pair(x, y, order)
    return bool(np.all(order.sign * (b - a) > order.strict_margin))


def _as_points(points, order: ConeOrder) -> np.ndarray:
    P = np.asarray(points, dtype=float)
    if P.ndim == 1:
        P = P[None, :]
    if P.ndim != 2 or P.shape[0] == 0:
        raise UsageError("expected a nonempty set of points")
    if order.dimension is not None and P.shape[1] != order.dimension:
        raise UsageError(f"expected dimension {order.dimension}, got {P.shape[1]}")
    if not np.all(np.isfinite(P)):
        raise UsageError("point set has non-finite coordinates")
    return P


def ordered_pair(points, order: ConeOrder = DEFAULT_ORDER, chunk: int = 512):
    """Return the most separated ordered pair ``(p, q)`` with ``p`` below ``q``, or None.

    With ``strict_margin == 0`` a pair is ordered when ``p <= q`` and ``p != q``.
    With a positive margin it is ordered only when every coordinate of
    ``q - p`` exceeds the margin, which makes the test blind to quantization
    noise smaller than half the margin.  "Most separated" means the largest
    smallest-coordinate gap.
    """
    P = _as_points(points, order) * order.sign
    m = order.strict_margin
    best = None
    best_gap = -np.inf
    for start in range(0, len(P), chunk):
        block = P[start:start + chunk]
        diff = P[None, :, :] - block[:, None, :]  # q - p with p from block
        gap = diff.min(axis=2)
        if m > 0:
            mask = gap > m
        else:
            mask = (gap >= 0) & (np.abs(diff).max(axis=2) > 0)
        if not mask.any():
            continue
        g = np.where(mask, gap, -np.inf)
        i, j = np.unravel_index(int(np.argmax(g)), g.shape)
        if g[i, j] > best_gap:
            best_gap = g[i, j]
            best = (start + i, j)
    if best is None:
        return None
    i, j = best
    P0 = P * order.sign
    return P0[i].copy(), P0[j].copy()


def is_unordered(points, order: ConeOrder = DEFAULT_ORDER):
    """Return ``(True, None)`` or ``(False, (p, q))`` with ``p`` ordered below ``q``."""
    pair = ordered_pair(points, order)
    return (pair is None), pair


def order_interval_contains(a, b, x, order: ConeOrder = DEFAULT_ORDER) -> bool:
    lo, hi = _pair(a, b, order)
    _, v = _pair(a, x, order)
    s = order.sign
    return bool(np.all(s * (v - lo) >= 0) and np.all(s * (hi - v) >= 0))


def order_hull_contains(A, B, x, order: ConeOrder = DEFAULT_ORDER) -> bool:
    """True iff some ``a`` in A and ``b`` in B satisfy ``a <= x <= b``."""
    PA = _as_points(A, order)
    PB = _as_points(B, order)
    v = as_vec(x)
    if PA.shape[1] != v.size or PB.shape[1] != v.size:
        raise UsageError("dimension mismatch")
    s = order.sign
    below = np.all(s * (v - PA) >= 0, axis=1).any()
    above = np.all(s * (PB - v) >= 0, axis=1).any()
    return bool(below and above)


def cone_boundary_distance(e) -> float:
    """Max-norm distance from ``e`` to the complement of the open orthant."""
    v = as_vec(e)
    return float(max(v.min(), 0.0))


def boxes_comparable(lo1, hi1, lo2, hi2, order: ConeOrder = DEFAULT_ORDER) -> bool:
    """Closed boxes are comparable if some point of one lies below some point of the other."""
    s = order.sign
    lo1, hi1, lo2, hi2 = (np.asarray(v, dtype=float) for v in (lo1, hi1, lo2, hi2))
    if s < 0:
        lo1, hi1, lo2, hi2 = -hi1, -lo1, -hi2, -lo2
    return bool(np.all(lo1 <= hi2) or np.all(lo2 <= hi1))

