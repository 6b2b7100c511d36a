"""SRK tableaux and their quadratic-invariant defect matrices.

An s-stage stochastic Runge-Kutta method for the Stratonovich SDE
``dy = f(y) dt + g(y) o dW`` is defined by coefficient matrices A (drift),
B (diffusion) and weight vectors alpha, beta:

    Y_i   = y_n + h sum_j A[i,j] f(Y_j) + dW sum_j B[i,j] g(Y_j)
    y_n+1 = y_n + h sum_i alpha[i] f(Y_i) + dW sum_i beta[i] g(Y_i)

A method preserves every quadratic invariant y^T C y exactly iff the three
defect matrices

    M0[i,j] = alpha[i] A[i,j] + alpha[j] A[j,i] - alpha[i] alpha[j]
    M1[i,j] = beta[i]  B[i,j] + beta[j]  B[j,i] - beta[i]  beta[j]
    M*[i,j] = alpha[i] B[i,j] + A[j,i] beta[j]  - alpha[i] beta[j]

vanish.  Nonzero defect matrices feed the colored-tree audit in
:mod:`srkqi.trees`, which bounds how fast the invariant drifts.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import ConfigError, ParseError

#: Default absolute tolerance for the boolean coefficient checks.  Tableau
#: entries are O(1), so anything below ~1e-12 is floating-point noise.
DEFAULT_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Tableau:
    """Coefficients of an s-stage SRK method.  Immutable after construction."""

    s: int
    A: np.ndarray
    B: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    name: str = ""

    def __post_init__(self):
        if self.s < 1:
            raise ConfigError(f"stage count must be positive, got {self.s}")
        a = np.array(self.A, dtype=float)
        b = np.array(self.B, dtype=float)
        alpha = np.array(self.alpha, dtype=float)
        beta = np.array(self.beta, dtype=float)
        if a.shape != (self.s, self.s) or b.shape != (self.s, self.s):
            raise ConfigError(
                f"A and B must be {self.s}x{self.s}, got {a.shape} and {b.shape}"
            )
        if alpha.shape != (self.s,) or beta.shape != (self.s,):
            raise ConfigError(
                f"alpha and beta must have length {self.s}, "
                f"got {alpha.shape} and {beta.shape}"
            )
        for label, arr in (("A", a), ("B", b), ("alpha", alpha), ("beta", beta)):
            if not np.all(np.isfinite(arr)):
                raise ConfigError(f"non-finite entry in {label}")
        for arr in (a, b, alpha, beta):
            arr.setflags(write=False)
        object.__setattr__(self, "A", a)
        object.__setattr__(self, "B", b)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)
        # Spectral norms enter the contraction/bound estimates of the
        # iterative solvers; computed once here, as is explicitness.
        object.__setattr__(self, "a_norm", float(np.linalg.norm(a, 2)))
        object.__setattr__(self, "b_norm", float(np.linalg.norm(b, 2)))
        upper = np.triu_indices(self.s)
        object.__setattr__(
            self,
            "explicit",
            bool(np.all(a[upper] == 0.0) and np.all(b[upper] == 0.0)),
        )

    def __repr__(self):
        return f"Tableau(name={self.name!r}, s={self.s})"


@dataclass(frozen=True, eq=False)
class DefectMatrices:
    """The three conservation defect matrices and their largest entry."""

    m0: np.ndarray
    m1: np.ndarray
    mstar: np.ndarray
    max_abs: float


def _rat(x) -> float:
    return float(Fraction(x))


def _builtin_catalog():
    f = Fraction

    def mat(rows):
        return [[_rat(v) for v in row] for row in rows]

    def vec(vals):
        return [_rat(v) for v in vals]

    # All built-in coefficients are exact rationals, evaluated to double once.
    s21_a = [[0, 0, 0], [f(1, 4), 0, 0], [f(-1, 2), f(3, 2), 0]]
    s21_w = [0, f(2, 3), f(1, 3)]
    s22_a = [[0, 0, 0], [f(1, 2), 0, 0], [0, 1, 0]]
    s22_w = [f(1, 4), f(1, 2), f(1, 4)]
    return {
        "scheme_2_1": Tableau(
            3, mat(s21_a), mat(s21_a), vec(s21_w), vec(s21_w), name="scheme_2_1"
        ),
        "scheme_2_2": Tableau(
            3, mat(s22_a), mat(s22_a), vec(s22_w), vec(s22_w), name="scheme_2_2"
        ),
        "midpoint": Tableau(
            1, [[0.5]], [[0.5]], [1.0], [1.0], name="midpoint"
        ),
    }


_BUILTINS = _builtin_catalog()

BUILTIN_NAMES = tuple(sorted(_BUILTINS))


def builtin_tableau(name: str) -> Tableau:
    """Return one of the built-in tableaux by (case-insensitive) label."""
    key = name.strip().lower().replace("-", "_")
    try:
        return _BUILTINS[key]
    except KeyError:
        raise ConfigError(
            f"unknown tableau {name!r}; valid labels: {', '.join(BUILTIN_NAMES)}"
        ) from None


def _parse_entry(token: str, lineno: int) -> float:
    try:
        if "/" in token:
            return float(Fraction(token))
        return float(token)
    except (ValueError, ZeroDivisionError):
        raise ParseError(f"line {lineno}: cannot parse entry {token!r}") from None


def parse_tableau(text: str, name: str = "") -> Tableau:
    """Parse the tableau text format.

    Layout: ``s=<int>``, then s rows of A, a line ``B``, s rows of B, a line
    ``alpha`` and one row, a line ``beta`` and one row.  Entries are decimals
    or ``p/q`` rationals; ``#`` starts a comment line.
    """
    lines = [
        (i + 1, ln.strip())
        for i, ln in enumerate(text.splitlines())
        if ln.strip() and not ln.strip().startswith("#")
    ]
    pos = 0

    def take(what):
        nonlocal pos
        if pos >= len(lines):
            raise ParseError(f"line {len(text.splitlines()) + 1}: missing {what}")
        item = lines[pos]
        pos += 1
        return item

    lineno, header = take("header 's=<int>'")
    if not header.startswith("s="):
        raise ParseError(f"line {lineno}: expected 's=<int>', got {header!r}")
    try:
        s = int(header[2:])
    except ValueError:
        raise ParseError(f"line {lineno}: bad stage count {header[2:]!r}") from None
    if s < 1:
        raise ParseError(f"line {lineno}: stage count must be positive")

    def matrix_rows(label):
        rows = []
        for _ in range(s):
            lineno, ln = take(f"row of {label}")
            entries = ln.split()
            if len(entries) != s:
                raise ParseError(
                    f"line {lineno}: expected {s} entries in {label} row, "
                    f"got {len(entries)}"
                )
            rows.append([_parse_entry(tok, lineno) for tok in entries])
        return rows

    def section(label):
        lineno, ln = take(f"section marker {label!r}")
        if ln != label:
            raise ParseError(f"line {lineno}: expected {label!r}, got {ln!r}")

    def weight_row(label):
        lineno, ln = take(f"{label} weights")
        entries = ln.split()
        if len(entries) != s:
            raise ParseError(
                f"line {lineno}: expected {s} {label} weights, got {len(entries)}"
            )
        return [_parse_entry(tok, lineno) for tok in entries]

    a = matrix_rows("A")
    section("B")
    b = matrix_rows("B")
    section("alpha")
    alpha = weight_row("alpha")
    section("beta")
    beta = weight_row("beta")
    if pos != len(lines):
        lineno, ln = lines[pos]
        raise ParseError(f"line {lineno}: unexpected trailing content {ln!r}")
    return Tableau(s, a, b, alpha, beta, name=name)


def serialize_tableau(t: Tableau) -> str:
    """Inverse of :func:`parse_tableau` (up to float formatting)."""
    out = [f"s={t.s}"]
    out += [" ".join(repr(float(v)) for v in row) for row in t.A]
    out.append("B")
    out += [" ".join(repr(float(v)) for v in row) for row in t.B]
    out.append("alpha")
    out.append(" ".join(repr(float(v)) for v in t.alpha))
    out.append("beta")
    out.append(" ".join(repr(float(v)) for v in t.beta))
    return "\n".join(out) + "\n"


def defect_matrices(t: Tableau) -> DefectMatrices:
    """Compute M0, M1, M* for a tableau.

    M0 and M1 are symmetric by construction; all three vanish exactly for a
    conservative method.
    """
    da = np.diag(t.alpha)
    db = np.diag(t.beta)
    m0 = da @ t.A + t.A.T @ da - np.outer(t.alpha, t.alpha)
    m1 = db @ t.B + t.B.T @ db - np.outer(t.beta, t.beta)
    mstar = da @ t.B + t.A.T @ db - np.outer(t.alpha, t.beta)
    for m in (m0, m1, mstar):
        m.setflags(write=False)
    max_abs = float(max(np.abs(m).max() for m in (m0, m1, mstar)))
    return DefectMatrices(m0=m0, m1=m1, mstar=mstar, max_abs=max_abs)


def is_exactly_conservative(t: Tableau, tol: float = DEFAULT_TOL) -> bool:
    """True iff every defect-matrix entry is within ``tol`` of zero."""
    if tol < 0:
        raise ConfigError("tol must be nonnegative")
    return defect_matrices(t).max_abs <= tol


def is_explicit(t: Tableau) -> bool:
    """True iff A and B are both strictly lower triangular."""
    return t.explicit


def satisfies_order_one(t: Tableau, tol: float = DEFAULT_TOL) -> bool:
    """Check the strong-order-1.0 conditions.

    alpha^T e = 1, beta^T e = 1, beta^T B e = 1/2.
    """
    if tol < 0:
        raise ConfigError("tol must be nonnegative")
    e = np.ones(t.s)
    return (
        abs(t.alpha @ e - 1.0) <= tol
        and abs(t.beta @ e - 1.0) <= tol
        and abs(t.beta @ (t.B @ e) - 0.5) <= tol
    )
