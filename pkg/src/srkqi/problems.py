"""Test SDE systems in Stratonovich form.

Each problem is packaged as drift/diffusion callables with optional analytic
Jacobians and a list of symmetric matrices C defining quadratic invariants
I(y) = y^T C y.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True, eq=False)
class SdeSystem:
    """A d-dimensional autonomous Stratonovich SDE with one Wiener channel."""

    d: int
    drift: callable
    diffusion: callable
    drift_jacobian: callable = None
    diffusion_jacobian: callable = None
    invariants: tuple = ()
    name: str = ""
    params: dict = field(default_factory=dict)


def finite_difference_jacobian(fn, y: np.ndarray) -> np.ndarray:
    """Central-difference Jacobian, step 1e-7 * max(1, |y|).

    Fallback used by the Newton stage solver when a problem carries no
    analytic Jacobian.
    """
    y = np.asarray(y, dtype=float)
    step = 1e-7 * max(1.0, float(np.linalg.norm(y)))
    cols = []
    for i in range(y.size):
        ei = np.zeros(y.size)
        ei[i] = step
        cols.append((fn(y + ei) - fn(y - ei)) / (2 * step))
    return np.column_stack(cols)


def kubo_system(a: float = 1.0, sigma: float = 1.0) -> SdeSystem:
    """Kubo oscillator: dp = -a x dt - sigma x o dW, dx = a p dt + sigma p o dW.

    State ordering (p, x).  Both drift and diffusion are rotations scaled by
    a and sigma, so I(y) = p^2 + x^2 is a quadratic invariant and the phase
    trajectory stays on a circle.
    """
    rot = np.array([[0.0, -1.0], [1.0, 0.0]])
    drift_jac = a * rot
    diff_jac = sigma * rot
    drift_jac.setflags(write=False)
    diff_jac.setflags(write=False)
    identity = np.eye(2)
    identity.setflags(write=False)
    return SdeSystem(
        d=2,
        drift=lambda y: np.array([-a * y[1], a * y[0]]),
        diffusion=lambda y: np.array([-sigma * y[1], sigma * y[0]]),
        drift_jacobian=lambda y: drift_jac,
        diffusion_jacobian=lambda y: diff_jac,
        invariants=(identity,),
        name="kubo",
        params={"a": a, "sigma": sigma},
    )


def kubo_exact(y0, a: float, sigma: float, t: float, w_t: float) -> np.ndarray:
    """Exact Kubo flow: rotation of (p0, x0) by the angle a*t + sigma*W(t).

    Follows from the Stratonovich chain rule applied to z = p + i*x, which
    gives dz = i z o (a dt + sigma dW).
    """
    theta = a * t + sigma * w_t
    c, s = math.cos(theta), math.sin(theta)
    p0, x0 = float(y0[0]), float(y0[1])
    return np.array([p0 * c - x0 * s, p0 * s + x0 * c])


def cubic_hamiltonian_system() -> SdeSystem:
    """Stochastic Hamiltonian system with H0 = p q^2 / 2 and H1 = p^2 q / 2.

    dp = -p q dt - p^2/2 o dW,  dq = q^2/2 dt + p q o dW, state (p, q).
    The conserved object is phase-space area (symplecticity), not a quadratic
    invariant of the state, so ``invariants`` is empty; the circle-evolution
    experiment measures area directly.
    """
    return SdeSystem(
        d=2,
        drift=lambda y: np.array([-y[0] * y[1], 0.5 * y[1] ** 2]),
        diffusion=lambda y: np.array([-0.5 * y[0] ** 2, y[0] * y[1]]),
        drift_jacobian=lambda y: np.array([[-y[1], -y[0]], [0.0, y[1]]]),
        diffusion_jacobian=lambda y: np.array([[-y[0], 0.0], [y[1], y[0]]]),
        invariants=(),
        name="cubic-hamiltonian",
    )


def invariant_value(c: np.ndarray, y) -> float:
    """Evaluate the quadratic form y^T C y."""
    c = np.asarray(c, dtype=float)
    y = np.asarray(y, dtype=float)
    if c.shape != (y.size, y.size):
        raise ConfigError(
            f"invariant matrix {c.shape} does not match state of length {y.size}"
        )
    return float(y @ c @ y)
