"""Rooted colored trees, elementary weights, and near-conservation audits.

Nodes carry color 0 (deterministic, drawn as an open circle) or color 1
(stochastic, filled).  A tree of n0 deterministic and n1 stochastic nodes has
order ``n0 + n1/2``; all order bookkeeping here uses the doubled integer
``order2 = 2*n0 + n1`` so thresholds like "order sum <= gamma + 1/2" stay
exact integer comparisons.

The near-conservation audit pairs trees against the defect matrices of a
tableau: for every pair (left, right) with left in Gamma0/Gamma1 as dictated
by the family, the residual ``Phi(left)^T M Phi(right)`` must vanish for the
invariant drift to stay below the corresponding order.  Child order never
matters; trees are deduplicated through a canonical byte encoding.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ParseError, TreeCapError
from .tableau import Tableau, defect_matrices

#: Enumeration refuses to generate more trees than this by default.
DEFAULT_TREE_CAP = 10**6


class ColoredTree:
    """Immutable rooted tree with {0,1} node colors and unordered children.

    Children are stored sorted by canonical encoding, so two trees are equal
    iff their encodings are equal regardless of construction order.
    """

    __slots__ = ("root_color", "children", "encoding", "order2")

    def __init__(self, root_color: int, children: tuple = ()):
        if root_color not in (0, 1):
            raise ConfigError(f"node color must be 0 or 1, got {root_color!r}")
        kids = tuple(sorted(children, key=lambda c: c.encoding))
        enc = b"(%d" % root_color + b"".join(c.encoding for c in kids) + b")"
        object.__setattr__(self, "root_color", root_color)
        object.__setattr__(self, "children", kids)
        object.__setattr__(self, "encoding", enc)
        object.__setattr__(
            self, "order2", (2 - root_color) + sum(c.order2 for c in kids)
        )

    def __setattr__(self, name, value):
        raise AttributeError("ColoredTree is immutable")

    def __eq__(self, other):
        return isinstance(other, ColoredTree) and self.encoding == other.encoding

    def __hash__(self):
        return hash(self.encoding)

    def __repr__(self):
        return f"ColoredTree({tree_to_text(self)!r})"


TAU_0 = ColoredTree(0)
TAU_1 = ColoredTree(1)


def tree_order2(t: ColoredTree) -> int:
    """Doubled tree order 2*n0 + n1."""
    return t.order2


def canonical_encoding(t: ColoredTree) -> bytes:
    """Canonical byte encoding; equal trees <=> equal encodings."""
    return t.encoding


def tree_to_text(t: ColoredTree) -> str:
    """Bracket notation: single nodes ``t0``/``t1``, else ``[child,...]color``."""
    if not t.children:
        return f"t{t.root_color}"
    inner = ",".join(tree_to_text(c) for c in t.children)
    return f"[{inner}]{t.root_color}"


def tree_from_text(text: str) -> ColoredTree:
    """Parse the bracket notation produced by :func:`tree_to_text`."""
    s = text.replace(" ", "")
    pos = 0

    def parse() -> ColoredTree:
        nonlocal pos
        if pos >= len(s):
            raise ParseError(f"tree text {text!r}: unexpected end at offset {pos}")
        if s[pos] == "t":
            if pos + 1 >= len(s) or s[pos + 1] not in "01":
                raise ParseError(f"tree text {text!r}: bad leaf at offset {pos}")
            color = int(s[pos + 1])
            pos += 2
            return ColoredTree(color)
        if s[pos] != "[":
            raise ParseError(f"tree text {text!r}: expected 't' or '[' at offset {pos}")
        pos += 1
        children = [parse()]
        while pos < len(s) and s[pos] == ",":
            pos += 1
            children.append(parse())
        if pos >= len(s) or s[pos] != "]":
            raise ParseError(f"tree text {text!r}: missing ']' at offset {pos}")
        pos += 1
        if pos >= len(s) or s[pos] not in "01":
            raise ParseError(f"tree text {text!r}: missing root color at offset {pos}")
        color = int(s[pos])
        pos += 1
        return ColoredTree(color, tuple(children))

    out = parse()
    if pos != len(s):
        raise ParseError(f"tree text {text!r}: trailing content at offset {pos}")
    return out


def enumerate_trees(
    max_order2: int, cap: int = DEFAULT_TREE_CAP
) -> tuple[list[ColoredTree], list[ColoredTree]]:
    """All distinct colored rooted trees with doubled order <= max_order2.

    Returns (Gamma0, Gamma1) partitioned by root color, each sorted by
    (order2, encoding).  Raises :class:`TreeCapError` when the total count
    would exceed ``cap``.
    """
    if max_order2 < 1:
        raise ConfigError("max_order2 must be >= 1")
    by_weight: dict[int, list[ColoredTree]] = {}
    total = 0
    for w in range(1, max_order2 + 1):
        level: list[ColoredTree] = []
        for color in (0, 1):
            budget = w - (2 - color)
            if budget < 0:
                continue
            if budget == 0:
                level.append(ColoredTree(color))
                continue
            pool = [t for ww in range(1, budget + 1) for t in by_weight.get(ww, ())]
            pool.sort(key=lambda t: (t.order2, t.encoding))
            for kids in _multisets(pool, budget, 0):
                level.append(ColoredTree(color, kids))
        total += len(level)
        if total > cap:
            raise TreeCapError(
                f"enumeration up to order2={max_order2} exceeds the cap of "
                f"{cap} trees; lower the order bound"
            )
        by_weight[w] = level
    gamma0 = [t for lv in by_weight.values() for t in lv if t.root_color == 0]
    gamma1 = [t for lv in by_weight.values() for t in lv if t.root_color == 1]
    key = lambda t: (t.order2, t.encoding)
    return sorted(gamma0, key=key), sorted(gamma1, key=key)


def _multisets(pool: list[ColoredTree], budget: int, start: int):
    """Yield index-nondecreasing tuples from pool with order2 sum == budget."""
    if budget == 0:
        yield ()
        return
    for i in range(start, len(pool)):
        w = pool[i].order2
        if w > budget:
            break  # pool sorted by order2
        for rest in _multisets(pool, budget - w, i):
            yield (pool[i],) + rest


def elementary_weight(t: ColoredTree, tab: Tableau) -> np.ndarray:
    """Stage weight vector Phi(t).

    Phi of a single node is the all-ones vector; joining subtrees multiplies
    componentwise by A*Phi(child) for color-0 children and B*Phi(child) for
    color-1 children.  The root color does not enter Phi; it only decides
    which family (Gamma0/Gamma1) the tree pairs under.
    """
    phi = np.ones(tab.s)
    for child in t.children:
        mat = tab.A if child.root_color == 0 else tab.B
        phi = phi * (mat @ elementary_weight(child, tab))
    return phi


class Family(enum.Enum):
    """Which defect matrix a tree pair contracts against."""

    M0 = "M0"        # both roots deterministic
    MSTAR = "MSTAR"  # left root deterministic, right root stochastic
    M1 = "M1"        # both roots stochastic


@dataclass(frozen=True, eq=False)
class ConditionResidual:
    """One audited pairing: value = Phi(left)^T M Phi(right)."""

    left: ColoredTree
    right: ColoredTree
    family: Family
    order2_sum: int
    value: float


def _phi_cached(t: ColoredTree, tab: Tableau, cache: dict) -> np.ndarray:
    phi = cache.get(t.encoding)
    if phi is None:
        phi = np.ones(tab.s)
        for child in t.children:
            mat = tab.A if child.root_color == 0 else tab.B
            phi = phi * (mat @ _phi_cached(child, tab, cache))
        cache[t.encoding] = phi
    return phi


def _by_level(trees) -> dict[int, list]:
    levels: dict[int, list] = {}
    for t in trees:
        levels.setdefault(t.order2, []).append(t)
    return levels


def residual_table(
    tab: Tableau, max_order2_sum: int, cap: int = DEFAULT_TREE_CAP
) -> list[ConditionResidual]:
    """All pairings with doubled order sum <= max_order2_sum.

    M0 pairs both trees from Gamma0 and M1 both from Gamma1; those matrices
    are symmetric, so each unordered pair appears once.  MSTAR pairs are
    ordered with the Gamma0 tree on the left.  Sorted by
    (order2_sum, family, encodings).
    """
    if max_order2_sum < 2:
        raise ConfigError("max_order2_sum must be >= 2")
    gamma0, gamma1 = enumerate_trees(max_order2_sum - 1, cap=cap)
    d = defect_matrices(tab)
    cache: dict = {}
    phi = {
        t.encoding: _phi_cached(t, tab, cache) for t in gamma0 + gamma1
    }
    lev0 = _by_level(gamma0)
    lev1 = _by_level(gamma1)
    rows: list[ConditionResidual] = []

    def emit(left, right, family, mat):
        rows.append(
            ConditionResidual(
                left=left,
                right=right,
                family=family,
                order2_sum=left.order2 + right.order2,
                value=float(phi[left.encoding] @ mat @ phi[right.encoding]),
            )
        )

    def same_family(levels, family, mat):
        # unordered pairs: distinct levels crossed once, equal levels i <= j
        for w1, group1 in levels.items():
            for w2, group2 in levels.items():
                if w2 < w1 or w1 + w2 > max_order2_sum:
                    continue
                if w1 == w2:
                    for i, left in enumerate(group1):
                        for right in group1[i:]:
                            emit(left, right, family, mat)
                else:
                    for left in group1:
                        for right in group2:
                            emit(left, right, family, mat)

    same_family(lev0, Family.M0, d.m0)
    for w1, group1 in lev0.items():
        for w2, group2 in lev1.items():
            if w1 + w2 > max_order2_sum:
                continue
            for left in group1:
                for right in group2:
                    emit(left, right, Family.MSTAR, d.mstar)
    same_family(lev1, Family.M1, d.m1)

    family_rank = {Family.M0: 0, Family.MSTAR: 1, Family.M1: 2}
    rows.sort(
        key=lambda r: (
            r.order2_sum,
            family_rank[r.family],
            r.left.encoding,
            r.right.encoding,
        )
    )
    return rows


def qi_order(
    tab: Tableau,
    cap_order2: int,
    tol: float = 1e-12,
    cap: int = DEFAULT_TREE_CAP,
) -> int:
    """Largest doubled order 2*gamma <= cap_order2 certified by the audit.

    2*gamma is certified when every pairing with order2 sum <= 2*gamma + 1
    has |residual| <= tol.  Returns 0 if even the smallest pairing fails and
    cap_order2 if nothing fails up to cap_order2 + 1.
    """
    if tol < 0:
        raise ConfigError("tol must be nonnegative")
    if cap_order2 < 1:
        raise ConfigError("cap_order2 must be >= 1")
    first_bad = None
    for row in residual_table(tab, cap_order2 + 1, cap=cap):
        if abs(row.value) > tol:
            first_bad = row.order2_sum
            break
    if first_bad is None:
        return cap_order2
    return max(0, min(cap_order2, first_bad - 2))


def render_residual_table(rows: list[ConditionResidual], fmt: str = "text") -> str:
    """Render the audit table; columns family, left, right, order sum, value."""
    if fmt not in ("text", "csv"):
        raise ConfigError(f"unknown format {fmt!r}; use 'text' or 'csv'")
    header = ("family", "left_tree", "right_tree", "order_sum", "value")
    cells = [
        (
            r.family.value,
            tree_to_text(r.left),
            tree_to_text(r.right),
            f"{r.order2_sum / 2:.1f}",
            repr(r.value),
        )
        for r in rows
    ]
    if fmt == "csv":
        return "\n".join([",".join(header)] + [",".join(c) for c in cells]) + "\n"
    widths = [
        max(len(h), *(len(c[i]) for c in cells)) if cells else len(h)
        for i, h in enumerate(header)
    ]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    for c in cells:
        lines.append("  ".join(v.ljust(w) for v, w in zip(c, widths)))
    return "\n".join(lines) + "\n"
