"""Term algebra: sorts, canonical forms, normalization, substitutions."""

from __future__ import annotations

import pytest
from hypothesis import given, settings, strategies as st

from strandnarrow.terms import (
    App,
    FreshNames,
    SortError,
    SortPoset,
    Subst,
    Var,
    apply_subst,
    ax_equal,
    canonical,
    check_well_sorted,
    compose,
    least_sort,
    rename_apart,
    validate_subst,
    vars_of,
)
from strandnarrow.theory import RewriteBudgetError, EquationalTheory, Rule, normalize

from .conftest import V, c, f, nonce, secret, dh_signature, dh_theory


# ---------------------------------------------------------------------------
# sort poset

def test_poset_rejects_cycles():
    with pytest.raises(SortError):
        SortPoset(["A", "B"], [("A", "B"), ("B", "A")])


def test_poset_leq_transitive(sig):
    assert sig.poset.leq("Gen", "Msg")
    assert sig.poset.leq("Exp", "Msg")
    assert not sig.poset.leq("Msg", "Gen")
    assert sig.poset.same_component("Gen", "Nonce")


# ---------------------------------------------------------------------------
# least sort

def test_least_sort_nonce(sig):
    assert least_sort(nonce("a", "r"), sig) == "Nonce"


def test_least_sort_variable(sig):
    assert least_sort(V("A", "Name"), sig) == "Name"


def test_least_sort_exp(sig):
    assert least_sort(f("exp", c("g"), nonce("a", "r")), sig) == "Exp"


def test_ill_sorted_term_reports_position(sig):
    bad = f("n", c("g"), Var("r", "Fresh"))  # Gen is not <= Name
    with pytest.raises(SortError) as e:
        check_well_sorted(bad, sig)
    assert "(0,)" in str(e.value)


# ---------------------------------------------------------------------------
# ax_equal / canonical

def test_ax_equal_ac_product(sig):
    t1 = f("*", nonce("a", "r"), nonce("b", "r2"))
    t2 = f("*", nonce("b", "r2"), nonce("a", "r"))
    assert ax_equal(t1, t2, sig)


def test_ax_equal_reflexive(sig):
    t = f("e", V("K", "Key"), V("M"))
    assert ax_equal(t, t, sig)


def test_ax_equal_ac_assoc(sig):
    x, y, z = V("x", "Nonce"), V("y", "Nonce"), V("z", "Nonce")
    assert ax_equal(f("*", f("*", x, y), z), f("*", x, f("*", y, z)), sig)


def test_canonical_identical_iff_ax_equal(sig):
    t1 = f("*", nonce("a", "r"), f("*", nonce("b", "r2"), nonce("a", "r")))
    t2 = f("*", f("*", nonce("a", "r"), nonce("a", "r")), nonce("b", "r2"))
    assert canonical(t1, sig) == canonical(t2, sig)
    t3 = f("*", nonce("a", "r"), nonce("b", "r2"))
    assert canonical(t1, sig) != canonical(t3, sig)


# ---------------------------------------------------------------------------
# normalize

def test_normalize_decrypt(th):
    t = f("d", c("g"), f("e", c("g"), V("m")))
    # d(k, e(k, m)) -> m with k instantiated to a key-sorted term
    k = f("exp", c("g"), nonce("a", "r"))
    t = f("d", k, f("e", k, c("a")))
    assert normalize(t, th) == c("a")


def test_normalize_exp_tower(th, sig):
    y, z = V("y", "Nonce"), V("z", "Nonce")
    t = f("exp", f("exp", c("g"), y), z)
    assert normalize(t, th) == canonical(f("exp", c("g"), f("*", y, z)), sig)


def test_normalize_fixed_point(th):
    t = f(";", c("a"), c("b"))
    assert normalize(t, th) == t


def test_normalize_budget():
    sig = dh_signature()
    loop = EquationalTheory(
        sig, [Rule(f(";", c("a"), c("b")), f(";", c("a"), c("b")))], budget=50
    )
    with pytest.raises(RewriteBudgetError):
        normalize(f(";", c("a"), c("b")), loop)


# ---------------------------------------------------------------------------
# substitutions

def test_apply_simple(sig):
    s = Subst({V("X"): c("a")})
    assert apply_subst(s, f("e", V("K", "Key"), V("X")), sig) == f(
        "e", V("K", "Key"), c("a")
    )


def test_apply_identity(sig):
    t = f("e", V("K", "Key"), V("X"))
    assert apply_subst(Subst(), t, sig) == t


def test_apply_ac_merge(sig):
    # substituting into an AC argument re-canonicalizes the flattened form
    y = V("Y", "Nonce")
    t = f("exp", c("g"), f("*", y, nonce("a", "r")))
    s = Subst({y: nonce("b", "r2")})
    expect = f("exp", c("g"), f("*", nonce("b", "r2"), nonce("a", "r")))
    assert apply_subst(s, t, sig) == canonical(expect, sig)


def test_compose_chain(sig):
    s1 = Subst({V("X"): V("Y")})
    s2 = Subst({V("Y"): c("a")})
    out = compose(s1, s2, sig)
    assert out.get(V("X")) == c("a")
    assert out.get(V("Y")) == c("a")


def test_compose_identity(sig):
    s = Subst({V("X"): c("a")})
    assert compose(s, Subst(), sig) == s
    assert compose(Subst(), s, sig) == s


def test_compose_unfold(sig):
    s1 = Subst({V("X"): f("e", V("K", "Key"), V("Y"))})
    s2 = Subst({V("Y"): f(";", V("Z"), V("Z"))})
    out = compose(s1, s2, sig)
    assert out.get(V("X")) == f("e", V("K", "Key"), f(";", V("Z"), V("Z")))
    assert out.get(V("Y")) == f(";", V("Z"), V("Z"))


def test_subst_validation_fresh_rigidity(sig):
    bad = Subst({Var("r", "Fresh"): c("a")})
    with pytest.raises(SortError):
        validate_subst(bad, sig)
    ok = Subst({Var("r", "Fresh"): Var("r2", "Fresh")})
    validate_subst(ok, sig)


def test_rename_apart_preserves_structure(sig):
    gen = FreshNames()
    t = f("e", V("K", "Key"), V("M"))
    renamed, ren = rename_apart(t, gen, sig)
    assert isinstance(renamed, App) and renamed.op == "e"
    assert vars_of(renamed).isdisjoint(vars_of(t))
    assert {v.sort for v in vars_of(renamed)} == {"Key", "Msg"}


def test_rename_apart_ground(sig):
    gen = FreshNames()
    t = f(";", c("a"), c("b"))
    renamed, ren = rename_apart(t, gen, sig)
    assert renamed == t and not ren


def test_rename_apart_shared_occurrences(sig):
    gen = FreshNames()
    k = V("K", "Key")
    t = f(";", f("e", k, c("a")), f("e", k, c("b")))
    renamed, _ = rename_apart(t, gen, sig)
    assert isinstance(renamed, App)
    left, right = renamed.args
    assert left.args[0] == right.args[0]  # same fresh name at both occurrences


# ---------------------------------------------------------------------------
# property tests

_sig = dh_signature()
_th = dh_theory(_sig)

_names = st.sampled_from([c("a"), c("b"), c("i")])
_fresh = st.sampled_from([Var("r", "Fresh"), Var("r2", "Fresh")])
_mvars = st.sampled_from([V("X"), V("Y"), V("Z", "Nonce"), V("K", "Key")])


def _terms(depth: int = 3):
    base = st.one_of(_names, _mvars, st.just(c("g")))
    return st.recursive(
        base,
        lambda kids: st.one_of(
            st.builds(lambda a, b: f(";", a, b), kids, kids),
            st.builds(lambda a, rv: f("n", a, rv), _names, _fresh),
            st.builds(lambda a, rv: f("sec", a, rv), _names, _fresh),
            st.builds(
                lambda a, b: f("*", a, b),
                st.builds(lambda x, rv: f("n", x, rv), _names, _fresh),
                kids.filter(lambda t: _sig.poset.leq(least_sort(t, _sig), "Nonce")),
            ),
            st.builds(
                lambda k, m: f("e", k, m),
                st.builds(lambda x: f("exp", c("g"), x),
                          st.builds(lambda a, rv: f("n", a, rv), _names, _fresh)),
                kids,
            ),
            st.builds(
                lambda k, m: f("d", k, m),
                st.builds(lambda x: f("exp", c("g"), x),
                          st.builds(lambda a, rv: f("n", a, rv), _names, _fresh)),
                kids,
            ),
        ),
        max_leaves=6,
    )


@settings(max_examples=150, deadline=None)
@given(_terms())
def test_prop_normalize_idempotent(t):
    n1 = normalize(t, _th)
    assert normalize(n1, _th) == n1


@settings(max_examples=150, deadline=None)
@given(_terms(), _terms(), _terms())
def test_prop_ax_equal_equivalence(t1, t2, t3):
    assert ax_equal(t1, t1, _sig)
    if ax_equal(t1, t2, _sig):
        assert ax_equal(t2, t1, _sig)
    if ax_equal(t1, t2, _sig) and ax_equal(t2, t3, _sig):
        assert ax_equal(t1, t3, _sig)


@settings(max_examples=100, deadline=None)
@given(_terms(), _terms())
def test_prop_ax_equal_congruence(t1, t2):
    if ax_equal(t1, t2, _sig):
        assert ax_equal(f(";", t1, c("a")), f(";", t2, c("a")), _sig)
        assert ax_equal(f("e", f("exp", c("g"), nonce("a", "r")), t1),
                        f("e", f("exp", c("g"), nonce("a", "r")), t2), _sig)


# occurs-check respecting bindings only: cyclic maps are outside the contract
_substs = st.builds(
    lambda pairs: Subst(
        {v: t for v, t in pairs if vars_of(t).isdisjoint({V("X"), V("Y")})}
    ),
    st.lists(
        st.tuples(st.sampled_from([V("X"), V("Y")]), _terms()),
        max_size=2,
    ),
)


@settings(max_examples=150, deadline=None)
@given(_substs, _substs, _terms())
def test_prop_compose_is_sequential_application(s1, s2, t):
    lhs = apply_subst(compose(s1, s2, _sig), t, _sig)
    rhs = apply_subst(s2, apply_subst(s1, t, _sig), _sig)
    assert ax_equal(lhs, rhs, _sig)


@settings(max_examples=150, deadline=None)
@given(_terms(), _terms())
def test_prop_canonical_decides_ax_equal(t1, t2):
    assert ax_equal(t1, t2, _sig) == (canonical(t1, _sig) == canonical(t2, _sig))


@settings(max_examples=100, deadline=None)
@given(_terms())
def test_prop_sort_soundness_under_substitution(t):
    # instantiate Msg variables with a Name constant: least sort may only drop
    s = Subst({V("X"): c("a"), V("Y"): c("b")})
    out = apply_subst(s, t, _sig)
    assert _sig.poset.leq(least_sort(out, _sig), least_sort(t, _sig))
