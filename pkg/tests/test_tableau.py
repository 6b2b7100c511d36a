import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srkqi.errors import ConfigError, ParseError
from srkqi.tableau import (
    BUILTIN_NAMES,
    Tableau,
    builtin_tableau,
    defect_matrices,
    is_exactly_conservative,
    is_explicit,
    parse_tableau,
    satisfies_order_one,
    serialize_tableau,
)

from _oracles import MIDPOINT, SCHEME_2_1, SCHEME_2_2, rational_defect


def test_builtin_scheme_2_1_coefficients():
    t = builtin_tableau("scheme_2_1")
    assert t.s == 3
    expected = np.array([[0, 0, 0], [0.25, 0, 0], [-0.5, 1.5, 0]])
    assert np.array_equal(t.A, expected)
    assert np.array_equal(t.B, expected)
    assert np.array_equal(t.alpha, [0, 2 / 3, 1 / 3])
    assert np.array_equal(t.beta, t.alpha)


def test_builtin_scheme_2_2_coefficients():
    t = builtin_tableau("scheme_2_2")
    assert np.array_equal(t.A, [[0, 0, 0], [0.5, 0, 0], [0, 1, 0]])
    assert np.array_equal(t.alpha, [0.25, 0.5, 0.25])


def test_builtin_midpoint():
    t = builtin_tableau("midpoint")
    assert t.s == 1
    assert t.A[0, 0] == 0.5 and t.B[0, 0] == 0.5
    assert t.alpha[0] == 1.0 and t.beta[0] == 1.0


def test_builtin_names_case_insensitive():
    assert builtin_tableau("MidPoint").name == "midpoint"
    assert builtin_tableau("Scheme_2_1").name == "scheme_2_1"


def test_unknown_builtin_lists_labels():
    with pytest.raises(ConfigError) as err:
        builtin_tableau("nosuch")
    for name in BUILTIN_NAMES:
        assert name in str(err.value)


def test_tableau_validation():
    with pytest.raises(ConfigError):
        Tableau(2, [[0.0]], [[0.0]], [1.0], [1.0])
    with pytest.raises(ConfigError):
        Tableau(1, [[np.nan]], [[0.0]], [1.0], [1.0])
    with pytest.raises(ConfigError):
        Tableau(1, [[0.0]], [[0.0]], [1.0, 2.0], [1.0])


# --- parsing ---------------------------------------------------------------

def test_parse_round_trips_builtins():
    for name in BUILTIN_NAMES:
        t = builtin_tableau(name)
        again = parse_tableau(serialize_tableau(t), name=name)
        assert np.array_equal(again.A, t.A)
        assert np.array_equal(again.B, t.B)
        assert np.array_equal(again.alpha, t.alpha)
        assert np.array_equal(again.beta, t.beta)


def test_parse_accepts_rationals_and_comments():
    text = "# a midpoint tableau\ns=1\n1/2\nB\n0.5\nalpha\n1\nbeta\n2/2\n"
    t = parse_tableau(text)
    assert t.A[0, 0] == 0.25 * 2
    assert t.beta[0] == 1.0


def test_parse_dimension_error_carries_line():
    text = "s=3\n0 0 0\n1 0\n"
    with pytest.raises(ParseError, match="line 3"):
        parse_tableau(text)


def test_parse_bad_token():
    with pytest.raises(ParseError, match="line 2"):
        parse_tableau("s=1\nfoo\nB\n0.5\nalpha\n1\nbeta\n1\n")


def test_parse_missing_section():
    with pytest.raises(ParseError, match="alpha"):
        parse_tableau("s=1\n0.5\nB\n0.5\nbeta\n1\n")


def test_parse_trailing_garbage():
    with pytest.raises(ParseError, match="trailing"):
        parse_tableau("s=1\n0.5\nB\n0.5\nalpha\n1\nbeta\n1\nextra\n")


# --- defect matrices -------------------------------------------------------

def test_midpoint_defects_vanish():
    d = defect_matrices(builtin_tableau("midpoint"))
    assert d.max_abs == 0.0
    assert np.array_equal(d.m0, [[0.0]])


def test_scheme_2_1_defect_matrix_matches_rational_oracle():
    d = defect_matrices(builtin_tableau("scheme_2_1"))
    m0, m1, mstar = rational_defect(SCHEME_2_1["A"], SCHEME_2_1["alpha"])
    expected = np.array(m0, dtype=float)
    assert np.allclose(d.m0, expected, atol=1e-14, rtol=0)
    # A == B and alpha == beta, so all three defect matrices coincide
    assert np.array_equal(d.m0, d.m1)
    assert np.array_equal(d.m0, d.mstar)
    # spot values as fractions
    assert abs(d.m0[0, 1] - 1 / 6) < 1e-14
    assert abs(d.m0[1, 1] + 4 / 9) < 1e-14
    assert abs(d.m0[1, 2] - 5 / 18) < 1e-14
    assert abs(d.m0[2, 2] + 1 / 9) < 1e-14


def test_scheme_2_2_defect_spot_entries():
    d = defect_matrices(builtin_tableau("scheme_2_2"))
    m0, _, _ = rational_defect(SCHEME_2_2["A"], SCHEME_2_2["alpha"])
    assert np.allclose(d.m0, np.array(m0, dtype=float), atol=1e-14, rtol=0)
    assert abs(d.m0[0, 1] - 1 / 8) < 1e-14
    assert abs(d.m0[1, 1] + 1 / 4) < 1e-14
    assert abs(d.m0[2, 2] + 1 / 16) < 1e-14


def test_defect_column_sums_vanish_for_builtin_schemes():
    # feeds the tree audit: residuals against the all-ones vector vanish
    for name in ("scheme_2_1", "scheme_2_2"):
        d = defect_matrices(builtin_tableau(name))
        for m in (d.m0, d.m1, d.mstar):
            assert np.all(np.abs(m.sum(axis=0)) < 1e-14)
            assert np.all(np.abs(m.sum(axis=1)) < 1e-14)


def test_midpoint_rational_oracle():
    m0, m1, mstar = rational_defect(MIDPOINT["A"], MIDPOINT["alpha"])
    assert m0 == [[0]] and m1 == [[0]] and mstar == [[0]]


@st.composite
def tableaux(draw):
    s = draw(st.integers(min_value=1, max_value=4))
    val = st.floats(min_value=-2, max_value=2, allow_nan=False)
    a = draw(st.lists(st.lists(val, min_size=s, max_size=s), min_size=s, max_size=s))
    b = draw(st.lists(st.lists(val, min_size=s, max_size=s), min_size=s, max_size=s))
    alpha = draw(st.lists(val, min_size=s, max_size=s))
    beta = draw(st.lists(val, min_size=s, max_size=s))
    return Tableau(s, a, b, alpha, beta, name="random")


@settings(max_examples=60, deadline=None)
@given(tableaux())
def test_defect_matrices_symmetric(t):
    d = defect_matrices(t)
    assert np.all(np.abs(d.m0 - d.m0.T) <= 1e-14)
    assert np.all(np.abs(d.m1 - d.m1.T) <= 1e-14)
    assert d.max_abs == max(np.abs(m).max() for m in (d.m0, d.m1, d.mstar))


@settings(max_examples=40, deadline=None)
@given(tableaux())
def test_equal_drift_and_noise_coefficients_collapse_families(t):
    same = Tableau(t.s, t.A, t.A, t.alpha, t.alpha)
    d = defect_matrices(same)
    assert np.array_equal(d.m0, d.m1)
    assert np.array_equal(d.m0, d.mstar)


def test_exact_conservation_checks():
    assert is_exactly_conservative(builtin_tableau("midpoint"), 1e-12)
    assert not is_exactly_conservative(builtin_tableau("scheme_2_1"), 1e-12)
    assert not is_exactly_conservative(builtin_tableau("scheme_2_2"), 1e-12)
    assert is_exactly_conservative(builtin_tableau("midpoint"), 0.0)
    assert defect_matrices(builtin_tableau("midpoint")).max_abs == 0.0
    with pytest.raises(ConfigError):
        is_exactly_conservative(builtin_tableau("midpoint"), -1.0)


def test_explicitness():
    assert is_explicit(builtin_tableau("scheme_2_1"))
    assert is_explicit(builtin_tableau("scheme_2_2"))
    assert not is_explicit(builtin_tableau("midpoint"))


def test_order_one_conditions():
    for name in BUILTIN_NAMES:
        assert satisfies_order_one(builtin_tableau(name), 1e-12)
    # beta^T B e values behind the check
    t = builtin_tableau("scheme_2_1")
    assert abs(t.beta @ t.B @ np.ones(3) - 0.5) < 1e-15
    t = builtin_tableau("scheme_2_2")
    assert abs(t.beta @ t.B @ np.ones(3) - 0.5) < 1e-15
    broken = Tableau(1, [[0.5]], [[0.5]], [0.9], [1.0])
    assert not satisfies_order_one(broken, 1e-12)
