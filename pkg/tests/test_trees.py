from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srkqi.errors import ConfigError, ParseError, TreeCapError
from srkqi.tableau import Tableau, builtin_tableau
from srkqi.trees import (
    ColoredTree,
    Family,
    canonical_encoding,
    elementary_weight,
    enumerate_trees,
    qi_order,
    render_residual_table,
    residual_table,
    tree_from_text,
    tree_order2,
    tree_to_text,
)

from _oracles import (
    SCHEME_2_1,
    SCHEME_2_2,
    brute_force_trees,
    rational_defect,
    rational_residual,
    tree_as_tuple,
)

T0 = ColoredTree(0)
T1 = ColoredTree(1)

# The two root-color families with order <= 2.5, exactly as printed (12 + 32).
LISTED_GAMMA0 = [
    "t0", "[t1]0", "[t1,t1]0", "[[t1]1]0", "[t0]0", "[[t1]0]0", "[[t0]1]0",
    "[t0,t1]0", "[t1,t1,t1]0", "[t1,[t1]1]0", "[[[t1]1]1]0", "[[t1,t1]1]0",
]
LISTED_GAMMA1 = [
    "t1", "[t1]1", "[t0]1", "[[t1]1]1", "[t1,t1]1", "[t1,[t1]1]1",
    "[[[t1]1]1]1", "[[t1,t1]1]1", "[t1,t1,t1]1",
    "[[t0]1]1", "[t1,t0]1", "[[t1]0]1", "[t0,t0]1", "[[t0]0]1",
    "[[[t0]1]1]1", "[[t1,t0]1]1",
    "[t0,[t1]1]1", "[t0,t1,t1]1", "[t1,[t0]1]1", "[[t1]1,[t1]1]1",
    "[t1,[[t1]1]1]1",
    "[t1,t1,[t1]1]1", "[t1,[t1,t1]1]1", "[[[[t1]1]1]1]1", "[[[t1,t1]1]1]1",
    "[[[t1]1,t1]1]1",
    "[[t1,t1,t1]1]1", "[t1,t1,t1,t1]1", "[[[t1]0]1]1", "[t1,[t1]0]1",
    "[[t1,t1]0]1", "[[[t1]1]0]1",
]


def test_single_node_orders():
    assert tree_order2(T0) == 2
    assert tree_order2(T1) == 1


def test_nested_stochastic_chain_order():
    chain = ColoredTree(1, (ColoredTree(1, (T1,)),))
    assert tree_order2(chain) == 3


def test_encoding_ignores_child_order():
    a = ColoredTree(0, (T0, T1))
    b = ColoredTree(0, (T1, T0))
    assert canonical_encoding(a) == canonical_encoding(b)
    assert a == b and hash(a) == hash(b)
    nested1 = ColoredTree(1, (ColoredTree(1, (T1,)), T1))
    nested2 = ColoredTree(1, (T1, ColoredTree(1, (T1,))))
    assert canonical_encoding(nested1) == canonical_encoding(nested2)


def test_encoding_distinguishes_colors():
    assert canonical_encoding(T0) != canonical_encoding(T1)


def test_tree_text_round_trip():
    for text in LISTED_GAMMA0 + LISTED_GAMMA1:
        t = tree_from_text(text)
        assert tree_from_text(tree_to_text(t)) == t


def test_tree_text_errors():
    for bad in ("t2", "[t1", "[t1]x", "t1]", ""):
        with pytest.raises(ParseError):
            tree_from_text(bad)


def test_enumerate_smallest_levels():
    g0, g1 = enumerate_trees(1)
    assert g0 == [] and g1 == [T1]
    g0, g1 = enumerate_trees(2)
    assert g0 == [T0]
    assert set(g1) == {T1, ColoredTree(1, (T1,))}


def test_enumerate_matches_printed_listing():
    g0, g1 = enumerate_trees(5)
    assert len(g0) == 12 and len(g1) == 32
    assert set(g0) == {tree_from_text(t) for t in LISTED_GAMMA0}
    assert set(g1) == {tree_from_text(t) for t in LISTED_GAMMA1}


def test_enumerate_agrees_with_brute_force_to_order_three():
    g0, g1 = enumerate_trees(6)
    bf0, bf1 = brute_force_trees(6)
    assert {tree_as_tuple(t) for t in g0} == bf0
    assert {tree_as_tuple(t) for t in g1} == bf1
    # no duplicate encodings anywhere
    assert len({t.encoding for t in g0 + g1}) == len(g0) + len(g1)


def test_enumerate_is_sorted_and_deterministic():
    g0, g1 = enumerate_trees(5)
    for group in (g0, g1):
        keys = [(t.order2, t.encoding) for t in group]
        assert keys == sorted(keys)
    again = enumerate_trees(5)
    assert again == (g0, g1)


def test_enumeration_cap():
    with pytest.raises(TreeCapError):
        enumerate_trees(5, cap=10)


# --- elementary weights -----------------------------------------------------

def test_phi_single_nodes_are_ones():
    tab = builtin_tableau("scheme_2_1")
    assert np.array_equal(elementary_weight(T0, tab), np.ones(3))
    assert np.array_equal(elementary_weight(T1, tab), np.ones(3))


def test_phi_fixtures_scheme_2_1():
    tab = builtin_tableau("scheme_2_1")
    be = elementary_weight(tree_from_text("[t1]1"), tab)
    assert np.allclose(be, [0, 0.25, 1], atol=1e-15)
    b2e = elementary_weight(tree_from_text("[[t1]1]1"), tab)
    assert np.allclose(b2e, [0, 0, 0.375], atol=1e-15)


def test_phi_fixture_scheme_2_2():
    tab = builtin_tableau("scheme_2_2")
    sq = elementary_weight(tree_from_text("[t1,t1]1"), tab)
    assert np.allclose(sq, [0, 0.25, 1], atol=1e-15)


def test_phi_ignores_root_color():
    tab = builtin_tableau("scheme_2_2")
    as0 = elementary_weight(tree_from_text("[t1,[t1]1]0"), tab)
    as1 = elementary_weight(tree_from_text("[t1,[t1]1]1"), tab)
    assert np.array_equal(as0, as1)


_tree_strategy = st.recursive(
    st.sampled_from([T0, T1]),
    lambda kids: st.builds(
        ColoredTree,
        st.integers(min_value=0, max_value=1),
        st.lists(kids, min_size=1, max_size=3).map(tuple),
    ),
    max_leaves=6,
)


@settings(max_examples=50, deadline=None)
@given(_tree_strategy, st.permutations(range(4)))
def test_phi_invariant_under_child_reordering(tree, perm):
    tab = builtin_tableau("scheme_2_1")
    kids = list(tree.children)
    shuffled = tuple(kids[perm[i] % len(kids)] for i in range(len(kids)))
    # not a true permutation when indices collide; build one explicitly
    order = sorted(range(len(kids)), key=lambda i: perm[i % 4])
    reordered = ColoredTree(tree.root_color, tuple(kids[i] for i in order))
    assert reordered == tree
    assert np.array_equal(
        elementary_weight(reordered, tab), elementary_weight(tree, tab)
    )
    del shuffled


# --- residual table ---------------------------------------------------------

def test_midpoint_residuals_all_zero():
    rows = residual_table(builtin_tableau("midpoint"), 8)
    assert rows
    assert all(r.value == 0.0 for r in rows)


def test_scheme_2_1_residuals_vanish_through_sum_four():
    rows = residual_table(builtin_tableau("scheme_2_1"), 5)
    by_sum = {}
    for r in rows:
        by_sum.setdefault(r.order2_sum, []).append(r)
    for s in (2, 3, 4):
        assert all(abs(r.value) <= 1e-12 for r in by_sum[s])
    # first failure lives at order sum 2.5
    assert any(abs(r.value) > 1e-12 for r in by_sum[5])


def test_scheme_2_1_minus_one_sixty_fourth():
    tab = builtin_tableau("scheme_2_1")
    rows = residual_table(tab, 6)
    left = tree_from_text("[t1]1")
    right = tree_from_text("[[t1]1]1")
    hits = [r for r in rows if r.left == left and r.right == right]
    assert len(hits) == 1
    r = hits[0]
    assert r.family is Family.M1 and r.order2_sum == 5
    assert abs(r.value + 1 / 64) < 1e-15
    # exact-rational verification of the same contraction
    _, m1, _ = rational_defect(SCHEME_2_1["A"], SCHEME_2_1["alpha"])
    exact = rational_residual(left, right, m1, SCHEME_2_1["A"], SCHEME_2_1["A"])
    assert exact == F(-1, 64)


def test_scheme_2_2_residuals_vanish_through_sum_five_and_fail_at_six():
    tab = builtin_tableau("scheme_2_2")
    rows = residual_table(tab, 6)
    assert all(abs(r.value) <= 1e-12 for r in rows if r.order2_sum <= 5)
    left = right = tree_from_text("[[t1]1]1")
    hits = [r for r in rows if r.left == left and r.right == right]
    assert len(hits) == 1
    assert hits[0].family is Family.M1 and hits[0].order2_sum == 6
    assert abs(hits[0].value + 1 / 64) < 1e-15
    _, m1, _ = rational_defect(SCHEME_2_2["A"], SCHEME_2_2["alpha"])
    exact = rational_residual(left, right, m1, SCHEME_2_2["A"], SCHEME_2_2["A"])
    assert exact == F(-1, 64)


def test_scheme_2_1_sum_five_values_match_rational_oracle():
    tab = builtin_tableau("scheme_2_1")
    m0r, m1r, mstarr = rational_defect(SCHEME_2_1["A"], SCHEME_2_1["alpha"])
    mats = {Family.M0: m0r, Family.M1: m1r, Family.MSTAR: mstarr}
    for r in residual_table(tab, 5):
        exact = rational_residual(
            r.left, r.right, mats[r.family], SCHEME_2_1["A"], SCHEME_2_1["A"]
        )
        assert abs(r.value - float(exact)) < 1e-14


def test_mstar_pairs_are_ordered_gamma0_left():
    rows = residual_table(builtin_tableau("scheme_2_1"), 5)
    for r in rows:
        if r.family is Family.MSTAR:
            assert r.left.root_color == 0 and r.right.root_color == 1
        elif r.family is Family.M0:
            assert r.left.root_color == 0 and r.right.root_color == 0
        else:
            assert r.left.root_color == 1 and r.right.root_color == 1


def test_mstar_matches_recolored_m1_when_coefficients_coincide():
    # with A == B and alpha == beta, MSTAR residuals equal the M1 residuals of
    # the pair with both roots recolored to 1, since M* == M1 and Phi ignores
    # the root color
    tab = builtin_tableau("scheme_2_2")
    rows = residual_table(tab, 6)
    m1_by_pair = {}
    for r in rows:
        if r.family is Family.M1:
            m1_by_pair[(r.left.encoding, r.right.encoding)] = r.value
    checked = 0
    for r in rows:
        if r.family is not Family.MSTAR:
            continue
        left = ColoredTree(1, r.left.children)
        right = ColoredTree(1, r.right.children)
        key = (left.encoding, right.encoding)
        if key not in m1_by_pair:
            key = (right.encoding, left.encoding)
        assert abs(m1_by_pair[key] - r.value) < 1e-15
        checked += 1
    assert checked > 10


def test_residual_table_sorted_by_order_sum():
    rows = residual_table(builtin_tableau("scheme_2_1"), 6)
    sums = [r.order2_sum for r in rows]
    assert sums == sorted(sums)


def test_render_formats():
    rows = residual_table(builtin_tableau("midpoint"), 4)
    text = render_residual_table(rows, "text")
    assert "family" in text and "t1" in text
    csv = render_residual_table(rows, "csv")
    assert csv.splitlines()[0] == "family,left_tree,right_tree,order_sum,value"
    with pytest.raises(ConfigError):
        render_residual_table(rows, "json")


# --- qi order ---------------------------------------------------------------

def test_qi_order_fixtures():
    assert qi_order(builtin_tableau("midpoint"), 10) == 10
    assert qi_order(builtin_tableau("scheme_2_1"), 10) == 3
    assert qi_order(builtin_tableau("scheme_2_2"), 10) == 4


def test_qi_order_zero_when_the_smallest_pairing_fails():
    # beta^T B e != beta.beta/... : a tableau violating e^T M1 e = 0
    t = Tableau(1, [[0.5]], [[0.0]], [1.0], [1.0])
    assert qi_order(t, 6) == 0


@settings(max_examples=30, deadline=None)
@given(
    st.sampled_from(["midpoint", "scheme_2_1", "scheme_2_2"]),
    st.floats(min_value=0, max_value=1e-3),
    st.floats(min_value=0, max_value=1e-3),
)
def test_qi_order_monotone_in_tol(name, tol_a, tol_b):
    tab = builtin_tableau(name)
    lo, hi = sorted((tol_a, tol_b))
    assert qi_order(tab, 6, lo) <= qi_order(tab, 6, hi)


def test_exactly_conservative_means_capped_at_every_cap():
    tab = builtin_tableau("midpoint")
    for cap in (1, 2, 5, 8):
        assert qi_order(tab, cap, 0.0) == cap
