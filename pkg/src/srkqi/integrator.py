"""Advance an SDE system with an SRK tableau.

Three stage-solving strategies are provided: an explicit sweep for strictly
lower triangular tableaux, fixed-point iteration, and Newton iteration on
the full stage system.  The iterative solvers support a fixed iteration
count (the object the drift bounds of :func:`fixed_point_qi_bound` and
:func:`newton_qi_bound` describe) and a tolerance-based stopping rule for
fully converged baselines.

The stage system for state y, step h and increment w is

    Y = e (x) y + h (A (x) I) F(Y) + w (B (x) I) G(Y)

with F, G the stagewise drift/diffusion stacks; the update is
``y + h alpha.F + w beta.G``.  When a policy carries a truncation exponent
k, the raw increment is clamped to +-sqrt(2kh|ln h|) before both the stage
equation and the update see it.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigError,
    DivergenceError,
    Error,
    NonConvergenceError,
    SingularMatrixError,
)
from .problems import SdeSystem, finite_difference_jacobian
from .tableau import Tableau, is_explicit
from .wiener import BrownianPath, truncate

#: States with norm beyond this abort the run as divergent.
DIVERGENCE_LIMIT = 1e12


class StepKind(enum.Enum):
    EXPLICIT = "explicit"
    FIXED_POINT = "fixed-point"
    NEWTON = "newton"


class JacobianMode(enum.Enum):
    ANALYTIC = "analytic"
    FINITE_DIFFERENCE = "finite-difference"


@dataclass(frozen=True)
class IterationPolicy:
    """How implicit stages are solved and when to stop.

    Exactly one of ``iteration_count`` (run exactly N sweeps) and
    ``residual_tol`` (stop once the update norm drops below it) must be set
    for the iterative kinds, and neither for EXPLICIT.  ``truncation_k``
    enables increment truncation; None means raw increments.
    """

    kind: StepKind
    iteration_count: int = None
    residual_tol: float = None
    max_iterations: int = 50
    truncation_k: int = None
    jacobian_mode: JacobianMode = JacobianMode.ANALYTIC

    def __post_init__(self):
        has_count = self.iteration_count is not None
        has_tol = self.residual_tol is not None
        if self.kind is StepKind.EXPLICIT:
            if has_count or has_tol:
                raise ConfigError(
                    "EXPLICIT policy takes neither iteration_count nor residual_tol"
                )
        else:
            if has_count == has_tol:
                raise ConfigError(
                    f"{self.kind.value} policy needs exactly one of "
                    "iteration_count / residual_tol"
                )
        if has_count:
            if self.iteration_count < 0:
                raise ConfigError("iteration_count must be >= 0")
            if self.max_iterations < self.iteration_count:
                raise ConfigError("max_iterations must cover iteration_count")
        if has_tol and self.residual_tol < 0:
            raise ConfigError("residual_tol must be nonnegative")
        if self.truncation_k is not None and self.truncation_k < 1:
            raise ConfigError("truncation_k must be >= 1")

    @classmethod
    def explicit(cls, truncation_k: int = None) -> "IterationPolicy":
        """Explicit stage sweep; raw increments by default."""
        return cls(kind=StepKind.EXPLICIT, truncation_k=truncation_k)

    @classmethod
    def fixed_point(
        cls,
        iterations: int = None,
        tol: float = None,
        truncation_k: int = 2,
        max_iterations: int = 50,
    ) -> "IterationPolicy":
        """Fixed-point stage solver; truncation on with k=2 by default."""
        return cls(
            kind=StepKind.FIXED_POINT,
            iteration_count=iterations,
            residual_tol=tol,
            max_iterations=max(max_iterations, iterations or 0),
            truncation_k=truncation_k,
        )

    @classmethod
    def newton(
        cls,
        iterations: int = None,
        tol: float = None,
        truncation_k: int = 2,
        max_iterations: int = 50,
        jacobian_mode: JacobianMode = JacobianMode.ANALYTIC,
    ) -> "IterationPolicy":
        """Newton stage solver; truncation on with k=2 by default."""
        return cls(
            kind=StepKind.NEWTON,
            iteration_count=iterations,
            residual_tol=tol,
            max_iterations=max(max_iterations, iterations or 0),
            truncation_k=truncation_k,
            jacobian_mode=jacobian_mode,
        )


@dataclass
class StepStats:
    iterations_used: int
    final_stage_residual: float
    truncated: bool = False


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States y_0..y_n on the uniform grid times[i] = i*h."""

    times: np.ndarray
    states: np.ndarray
    per_step_stats: list


def _check_state(y: np.ndarray):
    if not np.all(np.isfinite(y)) or np.linalg.norm(y) > DIVERGENCE_LIMIT:
        raise DivergenceError(f"state diverged: {y!r}", last_state=y)


def _eval_stages(sys: SdeSystem, stages: np.ndarray, f_out, g_out):
    for i in range(stages.shape[0]):
        f_out[i] = sys.drift(stages[i])
        g_out[i] = sys.diffusion(stages[i])


def _stage_defect(tab, y, h, w, stages, f_mat, g_mat) -> float:
    resid = stages - y - h * (tab.A @ f_mat) - w * (tab.B @ g_mat)
    return float(np.sqrt(np.sum(resid * resid)))


def explicit_step(
    tab: Tableau, sys: SdeSystem, y, h: float, dw: float
) -> np.ndarray:
    """One step of a strictly lower triangular tableau.

    Stages are filled in increasing index order, each using only earlier
    stages; the increment is consumed raw.
    """
    if not is_explicit(tab):
        raise ConfigError(f"tableau {tab.name!r} is not explicit")
    y = np.asarray(y, dtype=float)
    stages = np.empty((tab.s, y.size))
    f_mat = np.zeros((tab.s, y.size))
    g_mat = np.zeros((tab.s, y.size))
    for i in range(tab.s):
        stages[i] = y + h * (tab.A[i] @ f_mat) + dw * (tab.B[i] @ g_mat)
        f_mat[i] = sys.drift(stages[i])
        g_mat[i] = sys.diffusion(stages[i])
    y_next = y + h * (tab.alpha @ f_mat) + dw * (tab.beta @ g_mat)
    _check_state(y_next)
    return y_next


def _fixed_point(tab, sys, y, h, w, policy):
    y = np.asarray(y, dtype=float)
    s, d = tab.s, y.size
    stages = np.tile(y, (s, 1))
    f_mat = np.empty((s, d))
    g_mat = np.empty((s, d))
    fixed_count = policy.iteration_count is not None
    limit = policy.iteration_count if fixed_count else policy.max_iterations
    used = 0
    while used < limit:
        _eval_stages(sys, stages, f_mat, g_mat)
        new = y + h * (tab.A @ f_mat) + w * (tab.B @ g_mat)
        if not np.all(np.isfinite(new)):
            raise DivergenceError(f"fixed-point iterate diverged after {used} sweeps")
        update = float(np.sqrt(np.sum((new - stages) ** 2)))
        stages = new
        used += 1
        if not fixed_count and update <= policy.residual_tol:
            break
    else:
        if not fixed_count and limit > 0:
            _eval_stages(sys, stages, f_mat, g_mat)
            resid = _stage_defect(tab, y, h, w, stages, f_mat, g_mat)
            raise NonConvergenceError(
                f"fixed point did not reach tol={policy.residual_tol} within "
                f"{limit} iterations (stage residual {resid:.3e})",
                residual=resid,
            )
    _eval_stages(sys, stages, f_mat, g_mat)
    resid = _stage_defect(tab, y, h, w, stages, f_mat, g_mat)
    return stages, f_mat, g_mat, StepStats(used, resid)


def fixed_point_solve(tab, sys, y, h, dw_bar, policy):
    """Solve the stage system by fixed-point sweeps from Y = e (x) y.

    Returns the stage stack (s rows of d) and step statistics.  The
    increment is used as given; truncation is the caller's business.
    """
    if policy.kind is not StepKind.FIXED_POINT:
        raise ConfigError("fixed_point_solve requires a FIXED_POINT policy")
    stages, _, _, stats = _fixed_point(tab, sys, y, h, dw_bar, policy)
    return stages, stats


def _solve_pivoted(mat: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Dense Gaussian elimination with row pivoting and a pivot floor."""
    n = rhs.size
    aug = np.empty((n, n + 1))
    aug[:, :n] = mat
    aug[:, n] = rhs
    scale = max(float(np.abs(mat).max()), 1e-300)
    for col in range(n):
        p = col + int(np.argmax(np.abs(aug[col:, col])))
        pivot = aug[p, col]
        if abs(pivot) <= 1e-13 * scale:
            raise SingularMatrixError(
                f"Newton matrix is singular to working precision "
                f"(pivot {pivot:.3e} vs scale {scale:.3e})"
            )
        if p != col:
            tmp = aug[col].copy()
            aug[col] = aug[p]
            aug[p] = tmp
        factors = aug[col + 1:, col] / pivot
        aug[col + 1:, col:] -= factors[:, None] * aug[col, col:]
    x = np.empty(n)
    for row in range(n - 1, -1, -1):
        x[row] = (aug[row, n] - aug[row, row + 1:n] @ x[row + 1:]) / aug[row, row]
    return x


def _jacobians(sys, policy):
    if policy.jacobian_mode is JacobianMode.ANALYTIC and sys.drift_jacobian:
        fj = sys.drift_jacobian
    else:
        fj = lambda y: finite_difference_jacobian(sys.drift, y)
    if policy.jacobian_mode is JacobianMode.ANALYTIC and sys.diffusion_jacobian:
        gj = sys.diffusion_jacobian
    else:
        gj = lambda y: finite_difference_jacobian(sys.diffusion, y)
    return fj, gj


def _newton(tab, sys, y, h, w, policy):
    y = np.asarray(y, dtype=float)
    s, d = tab.s, y.size
    fj, gj = _jacobians(sys, policy)
    stages = np.tile(y, (s, 1))
    f_mat = np.empty((s, d))
    g_mat = np.empty((s, d))
    fixed_count = policy.iteration_count is not None
    limit = policy.iteration_count if fixed_count else policy.max_iterations
    used = 0
    sd = s * d
    jac = np.empty((sd, sd))
    diag = np.arange(sd)
    while used < limit:
        _eval_stages(sys, stages, f_mat, g_mat)
        resid = stages - y - h * (tab.A @ f_mat) - w * (tab.B @ g_mat)
        for j in range(s):
            fjj = fj(stages[j])
            gjj = gj(stages[j])
            for i in range(s):
                jac[i * d:(i + 1) * d, j * d:(j + 1) * d] = (
                    (-h * tab.A[i, j]) * fjj + (-w * tab.B[i, j]) * gjj
                )
        jac[diag, diag] += 1.0
        delta = _solve_pivoted(jac, resid.reshape(sd))
        stages = stages - delta.reshape(s, d)
        if not np.all(np.isfinite(stages)):
            raise DivergenceError(f"Newton iterate diverged after {used} sweeps")
        used += 1
        if not fixed_count and float(np.sqrt(delta @ delta)) <= policy.residual_tol:
            break
    else:
        if not fixed_count and limit > 0:
            _eval_stages(sys, stages, f_mat, g_mat)
            resid = _stage_defect(tab, y, h, w, stages, f_mat, g_mat)
            raise NonConvergenceError(
                f"Newton did not reach tol={policy.residual_tol} within "
                f"{limit} iterations (stage residual {resid:.3e})",
                residual=resid,
            )
    _eval_stages(sys, stages, f_mat, g_mat)
    resid = _stage_defect(tab, y, h, w, stages, f_mat, g_mat)
    return stages, f_mat, g_mat, StepStats(used, resid)


def newton_solve(tab, sys, y, h, dw_bar, policy):
    """Solve the stage system by Newton iteration from Y = e (x) y.

    The s*d linear system uses the exact block Jacobian
    I - h(A (x) I)F' - w(B (x) I)G' and dense row-pivoted elimination.
    On affine systems one iteration lands on the exact stage vector.
    """
    if policy.kind is not StepKind.NEWTON:
        raise ConfigError("newton_solve requires a NEWTON policy")
    stages, _, _, stats = _newton(tab, sys, y, h, dw_bar, policy)
    return stages, stats


def step(tab, sys, y, h, dw, policy):
    """One SRK step: truncate if asked, solve stages, combine with weights.

    The update uses the same (possibly truncated) increment as the stage
    equation.  Returns (next state, StepStats).
    """
    y = np.asarray(y, dtype=float)
    if policy.truncation_k is not None:
        w = truncate(dw, h, policy.truncation_k)
        was_truncated = w != dw
    else:
        w = dw
        was_truncated = False
    if policy.kind is StepKind.EXPLICIT:
        y_next = explicit_step(tab, sys, y, h, w)
        stats = StepStats(0, 0.0, was_truncated)
    else:
        solver = _fixed_point if policy.kind is StepKind.FIXED_POINT else _newton
        _, f_mat, g_mat, stats = solver(tab, sys, y, h, w, policy)
        stats.truncated = was_truncated
        y_next = y + h * (tab.alpha @ f_mat) + w * (tab.beta @ g_mat)
    _check_state(y_next)
    return y_next, stats


def integrate(
    tab, sys, y0, h: float, n_steps: int, policy, path: BrownianPath
) -> Trajectory:
    """Fold :func:`step` over the increments of a Brownian path."""
    if path.n < n_steps:
        raise ConfigError(f"path has {path.n} increments, need {n_steps}")
    if not math.isclose(path.h, h, rel_tol=1e-12, abs_tol=0.0):
        raise ConfigError(f"path step {path.h!r} does not match h={h!r}")
    y = np.asarray(y0, dtype=float)
    states = np.empty((n_steps + 1, y.size))
    states[0] = y
    stats = []
    for i in range(n_steps):
        try:
            y, st = step(tab, sys, y, h, float(path.increments[i]), policy)
        except Error as exc:
            wrapped = type(exc)(f"step {i}: {exc}")
            wrapped.step_index = i
            wrapped.last_state = states[i].copy()
            raise wrapped from exc
        states[i + 1] = y
        stats.append(st)
    states.setflags(write=False)
    times = h * np.arange(n_steps + 1)
    times.setflags(write=False)
    return Trajectory(times=times, states=states, per_step_stats=stats)


def kubo_milstein_step(y, a: float, sigma: float, h: float, dw: float) -> np.ndarray:
    """Milstein comparator for the Kubo oscillator, state (p, x).

    Drifts the invariant visibly over long runs; used as the non-conservative
    baseline in the phase-portrait studies.
    """
    p, x = float(y[0]), float(y[1])
    dw2 = dw * dw
    return np.array(
        [
            p - a * x * h - sigma * x * dw - 0.5 * sigma**2 * p * dw2,
            x + a * p * h + sigma * p * dw - 0.5 * sigma**2 * x * dw2,
        ]
    )


def contraction_factor(L: float, M: float, tab: Tableau, h: float, k: int) -> float:
    """Fixed-point contraction estimate delta = C1 sqrt(2kh|ln h|).

    C1 = max(|A| L, |B| M) in spectral norm; the Kronecker factor has norm
    one.  L and M are Lipschitz bounds of drift and diffusion.
    """
    if L < 0 or M < 0:
        raise ConfigError("Lipschitz bounds must be nonnegative")
    if not 0 < h < 1:
        raise ConfigError(f"contraction estimate defined for 0 < h < 1, got {h}")
    c1 = max(tab.a_norm * L, tab.b_norm * M)
    return c1 * math.sqrt(2 * k * abs(math.log(h)) * h)


def fixed_point_qi_bound(
    norm_c: float,
    c1: float,
    c2: float,
    d0: float,
    d1: float,
    delta: float,
    n_iterations: int,
) -> float:
    """Per-step invariant-drift bound for N fixed-point sweeps.

    |C| [ C2^2 D1^2 / C1^4 * delta^(2N+4) + 2 C2 D0 D1 / C1^2 * delta^(N+2) ].
    """
    if min(norm_c, c2, d0, d1) < 0 or c1 <= 0:
        raise ConfigError("constants must be nonnegative and C1 positive")
    if not 0 <= delta < 1:
        raise ConfigError(f"bound requires 0 <= delta < 1, got {delta}")
    n = n_iterations
    return norm_c * (
        (c2**2 * d1**2 / c1**4) * delta ** (2 * n + 4)
        + (2 * c2 * d0 * d1 / c1**2) * delta ** (n + 2)
    )


def newton_qi_bound(
    norm_c: float,
    c2: float,
    d0: float,
    d1: float,
    gamma: float,
    delta_hat: float,
    n_iterations: int,
) -> float:
    """Per-step invariant-drift bound for N Newton sweeps.

    |C| [ C2^2 / (D1^2 gamma^4) * dh^(2^(N+1)+2)
          + 2 C2 D0 / (D1 gamma^2) * dh^(2^N+1) ].
    """
    if gamma <= 0 or d1 <= 0:
        raise ConfigError("gamma and D1 must be positive")
    if min(norm_c, c2, d0) < 0:
        raise ConfigError("constants must be nonnegative")
    if not 0 <= delta_hat < 1:
        raise ConfigError(f"bound requires 0 <= delta_hat < 1, got {delta_hat}")
    n = n_iterations
    return norm_c * (
        (c2**2 / (d1**2 * gamma**4)) * delta_hat ** (2 ** (n + 1) + 2)
        + (2 * c2 * d0 / (d1 * gamma**2)) * delta_hat ** (2**n + 1)
    )


def trajectory_to_csv(traj: Trajectory, fileobj, config: dict = None) -> None:
    """Write ``n,t,y_1..y_d,iterations,residual`` rows with a comment header."""
    for key in sorted(config or {}):
        fileobj.write(f"# {key}={config[key]}\n")
    d = traj.states.shape[1]
    cols = ["n", "t"] + [f"y_{i + 1}" for i in range(d)] + ["iterations", "residual"]
    fileobj.write(",".join(cols) + "\n")
    for i, (t, y) in enumerate(zip(traj.times, traj.states)):
        if i == 0:
            iters, resid = 0, 0.0
        else:
            st = traj.per_step_stats[i - 1]
            iters, resid = st.iterations_used, st.final_stage_residual
        ys = ",".join(repr(float(v)) for v in y)
        fileobj.write(f"{i},{t!r},{ys},{iters},{resid!r}\n")
