"""Bundled constraint models: circle, 3-d torus (several potentials), sphere.

Each model supplies analytic constraint and potential gradients. Models
whose constraint is scalar and whose mass matrix is the identity also
carry numba-compiled scalar callbacks used by the fast chain kernels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np
from numba import njit

from .errors import InvalidParams, OffManifold
from .geometry import EPS_CONSTRAINT, MassMatrix

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class JitFuncs:
    """Numba-compiled scalar-constraint callbacks (m = 1, M = Id only)."""

    xi: Callable
    grad_xi: Callable
    V: Callable
    grad_V: Callable


@dataclass(frozen=True)
class ConstraintModel:
    """User-facing model: constraint map, potential, gradients and mass tensor."""

    name: str
    d: int
    m: int
    xi: Callable[[np.ndarray], np.ndarray]
    grad_xi: Callable[[np.ndarray], np.ndarray]
    V: Callable[[np.ndarray], float]
    grad_V: Callable[[np.ndarray], np.ndarray]
    mass: MassMatrix
    default_q0: np.ndarray | None = None
    jit: Optional[JitFuncs] = None
    # closed-form RATTLE position multiplier, when one exists (circle)
    analytic_multiplier: Callable[[float, float], float] | None = None

    @property
    def has_fast_path(self) -> bool:
        return self.jit is not None and self.m == 1 and self.mass.is_identity


class Potential(Enum):
    ZERO = "zero"
    QUADRATIC = "quadratic"
    DOUBLE_WELL = "doublewell"


@dataclass(frozen=True)
class TorusParams:
    R: float = 1.0
    r: float = 0.5
    potential: Potential = Potential.ZERO
    k: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.r < self.R):
            raise InvalidParams(f"torus requires 0 < r < R, got r={self.r}, R={self.R}")


# minimum cylinder radius around the z-axis where the torus gradient is defined
_RHO_FLOOR = 1e-8


def _torus_jit(R: float, r: float, pot_code: int, k: float) -> JitFuncs:
    @njit(cache=True, nogil=True)
    def xi(q):
        rho = math.sqrt(q[0] * q[0] + q[1] * q[1])
        return (R - rho) ** 2 + q[2] * q[2] - r * r

    @njit(cache=True, nogil=True)
    def grad_xi(q):
        g = np.empty(3)
        rho = math.sqrt(q[0] * q[0] + q[1] * q[1])
        if rho < _RHO_FLOOR:
            rho = _RHO_FLOOR
        c = -2.0 * (R - rho) / rho
        g[0] = c * q[0]
        g[1] = c * q[1]
        g[2] = 2.0 * q[2]
        return g

    @njit(cache=True, nogil=True)
    def V(q):
        if pot_code == 1:
            return 0.5 * k * (q[0] * q[0] + q[1] * q[1] + q[2] * q[2])
        elif pot_code == 2:
            u = q[0] * q[0] - R * R
            return k * u * u
        return 0.0

    @njit(cache=True, nogil=True)
    def grad_V(q):
        g = np.zeros(3)
        if pot_code == 1:
            g[0] = k * q[0]
            g[1] = k * q[1]
            g[2] = k * q[2]
        elif pot_code == 2:
            g[0] = 4.0 * k * q[0] * (q[0] * q[0] - R * R)
        return g

    return JitFuncs(xi, grad_xi, V, grad_V)


def torus_model(params: TorusParams = TorusParams()) -> ConstraintModel:
    """Torus of revolution around the z-axis: (R - sqrt(x^2+y^2))^2 + z^2 = r^2."""
    pot_code = {Potential.ZERO: 0, Potential.QUADRATIC: 1, Potential.DOUBLE_WELL: 2}[params.potential]
    jit = _torus_jit(params.R, params.r, pot_code, params.k)
    name = f"torus-{params.potential.value}"
    return ConstraintModel(
        name=name,
        d=3,
        m=1,
        xi=lambda q: np.array([jit.xi(q)]),
        grad_xi=lambda q: jit.grad_xi(q).reshape(3, 1),
        V=jit.V,
        grad_V=jit.grad_V,
        mass=MassMatrix.identity(3),
        default_q0=np.array([params.R + params.r, 0.0, 0.0]),
        jit=jit,
    )


def angle_coordinates(q: np.ndarray, params: TorusParams = TorusParams()) -> tuple[float, float]:
    """Angles (theta, phi) in [0, 2*pi)^2 of a point on the torus.

    Inverts (x, y, z) = ((R + r cos phi) cos theta, (R + r cos phi) sin theta, r sin phi).
    """
    xi_val = (params.R - math.hypot(q[0], q[1])) ** 2 + q[2] ** 2 - params.r ** 2
    if abs(xi_val) > 10.0 * EPS_CONSTRAINT:
        raise OffManifold(f"|xi(q)| = {abs(xi_val):.3e} too large for angle extraction")
    theta = math.atan2(q[1], q[0]) % TWO_PI
    rho = math.hypot(q[0], q[1])
    phi = math.atan2(q[2], rho - params.R) % TWO_PI
    return theta, phi


def torus_point(theta: float, phi: float, params: TorusParams = TorusParams()) -> np.ndarray:
    """Parameterization inverse to :func:`angle_coordinates`."""
    w = params.R + params.r * math.cos(phi)
    return np.array([w * math.cos(theta), w * math.sin(theta), params.r * math.sin(phi)])


def _sphere_like_jit(d: int) -> JitFuncs:
    @njit(cache=True, nogil=True)
    def xi(q):
        s = 0.0
        for i in range(q.shape[0]):
            s += q[i] * q[i]
        return s - 1.0

    @njit(cache=True, nogil=True)
    def grad_xi(q):
        return 2.0 * q

    @njit(cache=True, nogil=True)
    def V(q):
        return 0.0

    @njit(cache=True, nogil=True)
    def grad_V(q):
        return np.zeros(q.shape[0])

    return JitFuncs(xi, grad_xi, V, grad_V)


def _circle_multiplier(p_norm: float, dt: float) -> float:
    """Closed-form smallest-|.| RATTLE multiplier on the unit circle (V = 0).

    Defined iff dt^2 * |p|^2 <= 1; returns lambda with Delta t * lambda the
    position-constraint increment coefficient.
    """
    disc = 1.0 - dt * dt * p_norm * p_norm
    if disc < 0.0:
        raise InvalidParams(f"no real multiplier: dt*|p| = {dt * p_norm:.6g} > 1")
    return (-1.0 + math.sqrt(disc)) / (2.0 * dt)


def circle_model() -> ConstraintModel:
    """Unit circle in the plane, V = 0; carries the analytic multiplier oracle."""
    jit = _sphere_like_jit(2)
    return ConstraintModel(
        name="circle",
        d=2,
        m=1,
        xi=lambda q: np.array([jit.xi(q)]),
        grad_xi=lambda q: (2.0 * q).reshape(2, 1),
        V=jit.V,
        grad_V=jit.grad_V,
        mass=MassMatrix.identity(2),
        default_q0=np.array([1.0, 0.0]),
        jit=jit,
        analytic_multiplier=_circle_multiplier,
    )


def sphere_model() -> ConstraintModel:
    """Unit sphere in 3-d, V = 0. Extra smoke-test geometry, not tied to any experiment."""
    jit = _sphere_like_jit(3)
    return ConstraintModel(
        name="sphere",
        d=3,
        m=1,
        xi=lambda q: np.array([jit.xi(q)]),
        grad_xi=lambda q: (2.0 * q).reshape(3, 1),
        V=jit.V,
        grad_V=jit.grad_V,
        mass=MassMatrix.identity(3),
        default_q0=np.array([1.0, 0.0, 0.0]),
        jit=jit,
    )


MODEL_REGISTRY: dict[str, Callable[[], ConstraintModel]] = {
    "circle": circle_model,
    "torus-zero": lambda: torus_model(TorusParams(potential=Potential.ZERO)),
    "torus-quadratic": lambda: torus_model(TorusParams(potential=Potential.QUADRATIC, k=1.0)),
    "torus-doublewell": lambda: torus_model(TorusParams(potential=Potential.DOUBLE_WELL, k=5.0)),
    "sphere": sphere_model,
}


def get_model(name: str) -> ConstraintModel:
    try:
        return MODEL_REGISTRY[name]()
    except KeyError:
        raise InvalidParams(f"unknown model {name!r}; available: {sorted(MODEL_REGISTRY)}") from None


def finite_difference_grad(f: Callable[[np.ndarray], float], q: np.ndarray,
                           h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient, for validating user-supplied analytic gradients.

    Never used inside sampling loops.
    """
    q = np.asarray(q, dtype=float)
    g = np.empty_like(q)
    for i in range(q.size):
        e = np.zeros_like(q)
        e[i] = h
        g[i] = (f(q + e) - f(q - e)) / (2.0 * h)
    return g


def check_gradients(model: ConstraintModel, points: np.ndarray,
                    rtol: float = 1e-5, h: float = 1e-6) -> None:
    """Verify analytic gradients of xi and V against central differences."""
    for q in points:
        for j in range(model.m):
            fd = finite_difference_grad(lambda x: float(model.xi(x)[j]), q, h)
            an = model.grad_xi(q)[:, j]
            scale = max(np.linalg.norm(an), 1.0)
            if np.linalg.norm(fd - an) > rtol * scale:
                raise AssertionError(f"{model.name}: grad_xi[{j}] mismatch at {q}: {an} vs FD {fd}")
        fd = finite_difference_grad(model.V, q, h)
        an = model.grad_V(q)
        scale = max(np.linalg.norm(an), 1.0)
        if np.linalg.norm(fd - an) > rtol * scale:
            raise AssertionError(f"{model.name}: grad_V mismatch at {q}: {an} vs FD {fd}")
