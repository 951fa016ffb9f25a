"""Dynamical systems under analysis: maps, ODE semiflows, time-T maps.

Every right-hand side is vectorised: it takes an ``(N, n)`` array of points
and returns an ``(N, n)`` array.  Jacobians, when supplied, take ``(N, n)``
and return ``(N, n, n)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import EscapeError, NotFound, NumericalError, UsageError

__all__ = [
    "MAP",
    "SEMIFLOW",
    "SystemSpec",
    "TimeTMap",
    "MapPower",
    "MonotonicityReport",
    "make_map",
    "make_flow",
    "evaluate_map",
    "map_points",
    "flow_points",
    "vector_field",
    "jacobian",
    "jacobian_points",
    "verify_strong_monotonicity",
    "builtin_systems",
    "lookup",
    "system_names",
]

MAP = "map"
SEMIFLOW = "semiflow"
ESCAPE_INFLATION = 0.10
DEFAULT_STEP = 1e-2
FD_REL_STEP = 1e-6


@dataclass(frozen=True, eq=False)
class SystemSpec:
    """A map ``x -> S(x)`` or a vector field ``x -> f(x)`` on a box."""

    name: str
    kind: str
    lower: np.ndarray
    upper: np.ndarray
    rhs: Callable[[np.ndarray], np.ndarray]
    jac: Callable[[np.ndarray], np.ndarray] | None = None
    params: Mapping[str, object] = field(default_factory=dict)
    step: float = DEFAULT_STEP

    def __post_init__(self):
        if self.kind not in (MAP, SEMIFLOW):
            raise UsageError(f"kind must be {MAP!r} or {SEMIFLOW!r}")
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.ndim != 1 or lo.shape != hi.shape or lo.size == 0:
            raise UsageError("domain corners must be 1-d vectors of equal length")
        if not np.all(hi > lo):
            raise UsageError("domain must satisfy lower << upper")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if self.step <= 0:
            raise UsageError("integrator step must be positive")

    @property
    def dimension(self) -> int:
        return int(self.lower.size)

    @property
    def base(self) -> "SystemSpec":
        return self

    def inflated(self) -> tuple[np.ndarray, np.ndarray]:
        pad = ESCAPE_INFLATION * (self.upper - self.lower)
        return self.lower - pad, self.upper + pad

    def __repr__(self):
        return f"SystemSpec({self.name!r}, kind={self.kind!r}, dim={self.dimension})"


@dataclass(frozen=True, eq=False)
class TimeTMap:
    """The time-``horizon`` map of a semiflow, realised by fixed-step RK4."""

    base: SystemSpec
    horizon: float
    integrator_step: float | None = None

    def __post_init__(self):
        if self.base.kind != SEMIFLOW:
            raise UsageError("TimeTMap needs a semiflow")
        if not self.horizon > 0:
            raise UsageError("horizon must be positive")
        step = self.base.step if self.integrator_step is None else float(self.integrator_step)
        if step <= 0 or step > self.horizon:
            raise UsageError("integrator_step must lie in (0, horizon]")
        object.__setattr__(self, "integrator_step", step)

    kind = MAP

    @property
    def name(self) -> str:
        return f"{self.base.name}@T={self.horizon:g}"

    @property
    def dimension(self) -> int:
        return self.base.dimension

    @property
    def lower(self):
        return self.base.lower

    @property
    def upper(self):
        return self.base.upper

    def inflated(self):
        return self.base.inflated()


@dataclass(frozen=True, eq=False)
class MapPower:
    """``S^m`` for a map-kind system."""

    base_map: object
    power: int

    def __post_init__(self):
        if self.base_map.kind != MAP:
            raise UsageError("MapPower needs a map-kind system")
        if int(self.power) < 1:
            raise UsageError("power must be >= 1")

    kind = MAP

    @property
    def name(self) -> str:
        return f"{self.base_map.name}^{self.power}"

    @property
    def dimension(self) -> int:
        return self.base_map.dimension

    @property
    def lower(self):
        return self.base_map.lower

    @property
    def upper(self):
        return self.base_map.upper

    def inflated(self):
        return self.base_map.inflated()


def power(sys, m: int):
    return sys if m == 1 else MapPower(sys, int(m))


def make_map(name, func, lower, upper, jac=None, **params) -> SystemSpec:
    return SystemSpec(name, MAP, np.asarray(lower, float), np.asarray(upper, float), func, jac, params)


def make_flow(name, field_, lower, upper, jac=None, step=DEFAULT_STEP, **params) -> SystemSpec:
    return SystemSpec(name, SEMIFLOW, np.asarray(lower, float), np.asarray(upper, float), field_, jac,
                      params, step)


# ---------------------------------------------------------------- evaluation

def _points(X, n: int) -> np.ndarray:
    P = np.asarray(X, dtype=float)
    if P.ndim == 1:
        P = P[None, :]
    if P.ndim != 2 or P.shape[1] != n:
        raise UsageError(f"expected points of dimension {n}, got shape {np.shape(X)}")
    return P


def _outside(Y: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    return ~np.all(np.isfinite(Y) & (Y >= lo) & (Y <= hi), axis=1)


def _rk4_segment(f, X, duration, step, lo, hi, escaped):
    """Advance ``X`` by ``duration``; escaped rows are frozen in place."""
    n_steps = max(1, int(np.ceil(duration / step - 1e-9)))
    h = duration / n_steps
    for _ in range(n_steps):
        k1 = f(X)
        k2 = f(X + 0.5 * h * k1)
        k3 = f(X + 0.5 * h * k2)
        k4 = f(X + h * k3)
        Xn = X + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out = _outside(Xn, lo, hi) & ~escaped
        if out.any():
            escaped = escaped | out
        X = np.where(escaped[:, None], X, Xn)
    return X, escaped


def flow_points(sys: SystemSpec, X, times, step: float | None = None):
    """States of a semiflow at each of ``times`` (ascending, positive).

    Returns ``(states, escaped)``: lists with one ``(N, n)`` array and one
    boolean mask per time.  Escape is sticky: a trajectory that leaves the
    inflated domain stays flagged at all later times.
    """
    if sys.kind != SEMIFLOW:
        raise UsageError("flow_points needs a semiflow")
    ts = [float(t) for t in times]
    if any(t <= 0 for t in ts) or ts != sorted(ts):
        raise UsageError("times must be positive and ascending")
    step = sys.step if step is None else step
    lo, hi = sys.inflated()
    cur = _points(X, sys.dimension).copy()
    escaped = _outside(cur, lo, hi)
    states, masks, t0 = [], [], 0.0
    for t in ts:
        if t > t0:
            cur, escaped = _rk4_segment(sys.rhs, cur, t - t0, step, lo, hi, escaped)
        states.append(cur.copy())
        masks.append(escaped.copy())
        t0 = t
    return states, masks


def map_points(sys, X):
    """Apply a map-kind system to a batch; returns ``(images, escaped)``."""
    if isinstance(sys, TimeTMap):
        states, masks = flow_points(sys.base, X, [sys.horizon], sys.integrator_step)
        return states[0], masks[0]
    if isinstance(sys, MapPower):
        Y = _points(X, sys.dimension)
        escaped = np.zeros(len(Y), dtype=bool)
        for _ in range(sys.power):
            Y, esc = map_points(sys.base_map, Y)
            escaped |= esc
            Y = np.where(escaped[:, None], 0.0, Y)
        return Y, escaped
    if sys.kind != MAP:
        raise UsageError("map_points needs a map-kind system; wrap semiflows in TimeTMap")
    P = _points(X, sys.dimension)
    with np.errstate(all="ignore"):
        Y = np.asarray(sys.rhs(P), dtype=float)
    lo, hi = sys.inflated()
    return Y, _outside(Y, lo, hi)


def evaluate_map(sys, x) -> np.ndarray:
    """``S(x)`` for a map, ``S_T(x)`` for a :class:`TimeTMap`."""
    Y, escaped = map_points(sys, np.asarray(x, dtype=float)[None, :])
    if escaped[0]:
        raise EscapeError(f"{sys.name}: trajectory left the inflated domain", Y[0])
    return Y[0]


def vector_field(sys: SystemSpec, x) -> np.ndarray:
    if sys.kind != SEMIFLOW:
        raise UsageError("vector_field needs a semiflow")
    return np.asarray(sys.rhs(_points(x, sys.dimension)), dtype=float)[0]


# ---------------------------------------------------------------- Jacobians

def _fd_jacobian(func, X: np.ndarray) -> np.ndarray:
    N, n = X.shape
    J = np.empty((N, n, n))
    for j in range(n):
        h = FD_REL_STEP * np.maximum(1.0, np.abs(X[:, j]))
        Xp = X.copy()
        Xm = X.copy()
        Xp[:, j] += h
        Xm[:, j] -= h
        J[:, :, j] = (func(Xp) - func(Xm)) / (2.0 * h)[:, None]
    return J


def _rhs_jacobian(sys: SystemSpec, X: np.ndarray) -> np.ndarray:
    if sys.jac is not None:
        return np.asarray(sys.jac(X), dtype=float)
    return _fd_jacobian(sys.rhs, X)


def _variational(sys: TimeTMap, X: np.ndarray):
    base = sys.base
    N, n = X.shape
    n_steps = max(1, int(np.ceil(sys.horizon / sys.integrator_step - 1e-9)))
    h = sys.horizon / n_steps
    Phi = np.broadcast_to(np.eye(n), (N, n, n)).copy()

    def f(Y, P):
        return base.rhs(Y), _rhs_jacobian(base, Y) @ P

    Y = X.copy()
    for _ in range(n_steps):
        a1, b1 = f(Y, Phi)
        a2, b2 = f(Y + 0.5 * h * a1, Phi + 0.5 * h * b1)
        a3, b3 = f(Y + 0.5 * h * a2, Phi + 0.5 * h * b2)
        a4, b4 = f(Y + h * a3, Phi + h * b3)
        Y = Y + (h / 6.0) * (a1 + 2 * a2 + 2 * a3 + a4)
        Phi = Phi + (h / 6.0) * (b1 + 2 * b2 + 2 * b3 + b4)
    return Y, Phi


def jacobian_points(sys, X) -> np.ndarray:
    """Batch Jacobians, shape ``(N, n, n)``.

    Maps use the registered Jacobian or central differences; semiflows give
    the Jacobian of the vector field; time-T maps integrate the variational
    equation alongside the orbit.
    """
    P = _points(X, sys.dimension)
    if isinstance(sys, TimeTMap):
        J = _variational(sys, P)[1]
    elif isinstance(sys, MapPower):
        J = np.broadcast_to(np.eye(sys.dimension), (len(P), sys.dimension, sys.dimension)).copy()
        Y = P
        for _ in range(sys.power):
            J = jacobian_points(sys.base_map, Y) @ J
            Y = map_points(sys.base_map, Y)[0]
    else:
        J = _rhs_jacobian(sys, P)
    if not np.all(np.isfinite(J)):
        raise NumericalError(f"{sys.name}: non-finite Jacobian entries")
    return J


def jacobian(sys, x) -> np.ndarray:
    return jacobian_points(sys, np.asarray(x, dtype=float)[None, :])[0]


# ---------------------------------------------------------------- monotonicity

@dataclass
class MonotonicityReport:
    passed: bool
    criterion: str
    n_samples: int
    witness_point: np.ndarray | None = None
    witness_entry: tuple[int, int] | None = None
    witness_value: float | None = None
    message: str = ""

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "criterion": self.criterion,
            "n_samples": self.n_samples,
            "witness_point": None if self.witness_point is None else self.witness_point.tolist(),
            "witness_entry": None if self.witness_entry is None else list(self.witness_entry),
            "witness_value": self.witness_value,
            "message": self.message,
        }


def _strongly_connected_pattern(A: np.ndarray) -> bool:
    n = len(A)
    reach = (A > 0) | np.eye(n, dtype=bool)
    for _ in range(n):
        reach = reach | ((reach.astype(int) @ reach.astype(int)) > 0)
    return bool(reach.all())


def verify_strong_monotonicity(sys, n_samples: int = 1000, rng_seed=0) -> MonotonicityReport:
    """Sample the domain and test the derivative for strong positivity.

    Map kind: every Jacobian entry must be positive.  Semiflow kind: the
    vector-field Jacobian must be cooperative with a strongly connected
    off-diagonal pattern.  On failure the worst offending entry is reported.
    """
    if n_samples < 1:
        raise UsageError("n_samples must be >= 1")
    rng = np.random.default_rng(rng_seed)
    X = sys.lower + rng.random((n_samples, sys.dimension)) * (sys.upper - sys.lower)
    J = jacobian_points(sys, X)
    n = sys.dimension
    if sys.kind == MAP:
        vals = J.reshape(len(X), -1)
        worst = np.unravel_index(int(np.argmin(vals)), vals.shape)
        value = float(vals[worst])
        if value > 0:
            return MonotonicityReport(True, "positive-jacobian", n_samples)
        k, flat = worst
        return MonotonicityReport(False, "positive-jacobian", n_samples, X[k], divmod(int(flat), n), value,
                                  "Jacobian entry is not positive")
    off = ~np.eye(n, dtype=bool)
    offvals = np.where(off, J, np.inf).reshape(len(X), -1)
    worst = np.unravel_index(int(np.argmin(offvals)), offvals.shape)
    value = float(offvals[worst])
    if value < 0:
        k, flat = worst
        return MonotonicityReport(False, "cooperative-irreducible", n_samples, X[k], divmod(int(flat), n),
                                  value, "off-diagonal entry is negative (not cooperative)")
    if n > 1:
        for k in range(len(X)):
            if not _strongly_connected_pattern(np.where(off, J[k], 0.0)):
                return MonotonicityReport(False, "cooperative-irreducible", n_samples, X[k], None, None,
                                          "off-diagonal pattern is reducible")
    return MonotonicityReport(True, "cooperative-irreducible", n_samples)


# ---------------------------------------------------------------- registry

def linear_contraction(matrix=((0.5, 0.25), (0.25, 0.5)), half_width: float = 1.0) -> SystemSpec:
    A = np.asarray(matrix, dtype=float)
    n = len(A)

    def rhs(X):
        return X @ A.T

    def jac(X):
        return np.broadcast_to(A, (len(X), n, n)).copy()

    w = float(half_width)
    return make_map("linear-contraction", rhs, [-w] * n, [w] * n, jac, matrix=A.tolist(), half_width=w)


def diagonal_tanh(half_width: float = 2.0) -> SystemSpec:
    def rhs(X):
        t = np.tanh(X)
        return np.stack([t[:, 1] - t[:, 0], t[:, 0] - t[:, 1]], axis=1)

    def jac(X):
        s = 1.0 / np.cosh(X) ** 2
        J = np.empty((len(X), 2, 2))
        J[:, 0, 0] = -s[:, 0]
        J[:, 0, 1] = s[:, 1]
        J[:, 1, 0] = s[:, 0]
        J[:, 1, 1] = -s[:, 1]
        return J

    w = float(half_width)
    return make_flow("diagonal-tanh", rhs, [-w, -w], [w, w], jac, half_width=w)


def bistable_coop(gain: float = 2.0, half_width: float = 2.0) -> SystemSpec:
    g = float(gain)

    def rhs(X):
        return -X + np.tanh(g * X[:, ::-1])

    def jac(X):
        s = g / np.cosh(g * X[:, ::-1]) ** 2
        J = np.zeros((len(X), 2, 2))
        J[:, 0, 0] = J[:, 1, 1] = -1.0
        J[:, 0, 1] = s[:, 0]
        J[:, 1, 0] = s[:, 1]
        return J

    w = float(half_width)
    return make_flow("bistable-coop", rhs, [-w, -w], [w, w], jac, gain=g, half_width=w)


def coop_3d(w_self: float = 1.2, w_cross: float = 0.5, half_width: float = 2.0) -> SystemSpec:
    W = np.full((3, 3), float(w_cross))
    np.fill_diagonal(W, float(w_self))

    def rhs(X):
        return -X + np.tanh(X @ W.T)

    def jac(X):
        s = 1.0 / np.cosh(X @ W.T) ** 2
        return s[:, :, None] * W[None, :, :] - np.eye(3)[None]

    w = float(half_width)
    return make_flow("coop-3d", rhs, [-w] * 3, [w] * 3, jac, w_self=float(w_self), w_cross=float(w_cross),
                     half_width=w)


def henon(a: float = 1.4, b: float = 0.3, half_width: float = 2.0) -> SystemSpec:
    a, b = float(a), float(b)

    def rhs(X):
        return np.stack([1.0 + X[:, 1] - a * X[:, 0] ** 2, b * X[:, 0]], axis=1)

    def jac(X):
        J = np.zeros((len(X), 2, 2))
        J[:, 0, 0] = -2.0 * a * X[:, 0]
        J[:, 0, 1] = 1.0
        J[:, 1, 0] = b
        return J

    w = float(half_width)
    return make_map("henon", rhs, [-w, -w], [w, w], jac, a=a, b=b, half_width=w)


_REGISTRY: dict[str, Callable[..., SystemSpec]] = {
    "linear-contraction": linear_contraction,
    "diagonal-tanh": diagonal_tanh,
    "bistable-coop": bistable_coop,
    "coop-3d": coop_3d,
    "henon": henon,
}


def system_names() -> list[str]:
    return sorted(_REGISTRY)


def lookup(name: str, **params) -> SystemSpec:
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise NotFound(f"unknown system {name!r}; known: {', '.join(system_names())}") from None
    try:
        return factory(**params)
    except TypeError as exc:
        raise UsageError(f"bad parameters for {name!r}: {exc}") from None


def builtin_systems() -> dict[str, SystemSpec]:
    return {name: factory() for name, factory in sorted(_REGISTRY.items())}
