"""Unification: syntactic, modulo C/AC, modulo the full theory; matching.

Completeness is cross-checked against brute-force enumeration over a small
ground universe (constants a, b, g; one nonce per name; depth <= 2).
"""

from __future__ import annotations

import itertools

import pytest

from strandnarrow.matching import match_ax, match_many, matches
from strandnarrow.terms import (
    App,
    FreshNames,
    Subst,
    Var,
    apply_subst,
    ax_equal,
    canonical,
    least_sort,
    vars_of,
)
from strandnarrow.theory import normalize
from strandnarrow.unification import (
    UnifierSet,
    unify_ax,
    unify_equational,
    unify_syntactic,
    variants_vector,
)

from .conftest import V, c, f, nonce, secret


# ---------------------------------------------------------------------------
# ground universe oracle

def ground_universe(sig, th):
    """Ground terms of depth <= 2 over {a, b, g}, one nonce per name."""
    atoms = [c("a"), c("b"), c("g"), nonce("a", "ra"), nonce("b", "rb")]
    univ = list(atoms)
    for t1, t2 in itertools.product(atoms, repeat=2):
        if sig.poset.leq(least_sort(t1, sig), "Nonce") and sig.poset.leq(
            least_sort(t2, sig), "Nonce"
        ):
            univ.append(f("*", t1, t2))
        univ.append(f(";", t1, t2))
        if sig.poset.leq(least_sort(t1, sig), "Key"):
            univ.append(f("e", t1, t2))
            univ.append(f("d", t1, t2))
        if sig.poset.leq(least_sort(t1, sig), "GenvExp") and sig.poset.leq(
            least_sort(t2, sig), "Nonce"
        ):
            univ.append(f("exp", t1, t2))
    seen = set()
    out = []
    for t in univ:
        ct = normalize(t, th)
        if ct not in seen:
            seen.add(ct)
            out.append(ct)
    return out


def ground_assignments(vs, universe, sig):
    """All sort-respecting ground assignments of the variables."""
    vs = sorted(vs, key=lambda v: v.key())
    pools = []
    for v in vs:
        if v.sort == "Fresh":
            pools.append([Var("ra", "Fresh"), Var("rb", "Fresh")])
        else:
            pools.append(
                [t for t in universe if sig.poset.leq(least_sort(t, sig), v.sort)]
            )
    for combo in itertools.product(*pools):
        yield Subst(dict(zip(vs, combo)))


def is_instance_mod_theory(special: Subst, general: Subst, vs, th):
    """special == general . rho (modulo the theory) for some rho."""
    pairs = []
    for v in vs:
        pat = normalize(apply_subst(general, v, th.sig), th)
        tgt = normalize(apply_subst(special, v, th.sig), th)
        pairs.append((pat, tgt))
    for _ in match_many(pairs, th.sig):
        return True
    return False


def check_sound(res: UnifierSet, t1, t2, th):
    for s in res:
        n1 = normalize(apply_subst(s, t1, th.sig), th)
        n2 = normalize(apply_subst(s, t2, th.sig), th)
        assert n1 == n2, f"unsound unifier {s!r}"


def check_complete_on_universe(res: UnifierSet, t1, t2, th, universe):
    vs = sorted(vars_of(t1) | vars_of(t2), key=lambda v: v.key())
    for gamma in ground_assignments(vs, universe, th.sig):
        g1 = normalize(apply_subst(gamma, t1, th.sig), th)
        g2 = normalize(apply_subst(gamma, t2, th.sig), th)
        if g1 != g2:
            continue
        assert any(
            is_instance_mod_theory(gamma, s, vs, th) for s in res
        ), f"ground solution {gamma!r} not covered"


# ---------------------------------------------------------------------------
# unify_syntactic

def test_syntactic_variable_binding(sig):
    res = unify_syntactic(V("X"), f("e", f("exp", c("g"), nonce("a", "r")), c("a")), sig)
    assert len(res) == 1
    assert res.unifiers[0].get(V("X")) is not None


def test_syntactic_constructor_clash(sig):
    res = unify_syntactic(
        f("e", V("K", "Key"), V("M")), f("d", V("K2", "Key"), V("M2")), sig
    )
    assert len(res) == 0 and res.complete


def test_syntactic_sort_clash_is_empty_not_error(sig):
    res = unify_syntactic(V("A", "Name"), f("exp", c("g"), nonce("a", "r")), sig)
    assert len(res) == 0


def test_fresh_rigidity_blocks_nonvariable(sig, th):
    # fc is a non-variable of sort Fresh; a Fresh variable must not take it
    res = unify_syntactic(
        f("n", V("A", "Name"), Var("r", "Fresh")), f("n", c("a"), c("fc")), sig
    )
    assert len(res) == 0
    # enumeration over the rule set: no sort-preserving Fresh-respecting
    # unifier exists at all modulo the axioms either
    res2 = unify_ax(
        f("n", V("A", "Name"), Var("r", "Fresh")), f("n", c("a"), c("fc")), th
    )
    assert len(res2) == 0


def test_fresh_variable_pairs_unify(sig):
    res = unify_syntactic(
        f("n", c("a"), Var("r", "Fresh")), f("n", c("a"), Var("r2", "Fresh")), sig
    )
    assert len(res) == 1


# ---------------------------------------------------------------------------
# unify_ax

def test_unify_ax_ac_two_way_split(th, sig):
    x, y = V("x", "Nonce"), V("y", "Nonce")
    na, nb = nonce("a", "ra"), nonce("b", "rb")
    res = unify_ax(f("*", x, y), f("*", na, nb), th)
    check_sound(res, f("*", x, y), f("*", na, nb), th)
    sols = {(s.get(x), s.get(y)) for s in res}
    assert (na, nb) in sols and (nb, na) in sols
    universe = ground_universe(sig, th)
    check_complete_on_universe(res, f("*", x, y), f("*", na, nb), th, universe)


def test_unify_ax_identity_among_results(th):
    x, y = V("x", "Nonce"), V("y", "Nonce")
    res = unify_ax(f("*", x, y), f("*", x, y), th)
    assert any(not s for s in res)


def test_unify_ax_free_decomposition(th):
    k = f("exp", c("g"), nonce("a", "ra"))
    res = unify_ax(f("e", V("K", "Key"), V("M")), f("e", k, c("a")), th)
    assert len(res) == 1
    s = res.unifiers[0]
    assert s.get(V("K", "Key")) == canonical(k, th.sig)
    assert s.get(V("M")) == c("a")


def test_unify_ax_agrees_with_syntactic_on_free_terms(th, sig):
    t1 = f(";", V("X"), f("e", V("K", "Key"), c("a")))
    t2 = f(";", c("b"), f("e", f("exp", c("g"), nonce("a", "r")), V("M")))
    r1 = unify_ax(t1, t2, th)
    r2 = unify_syntactic(t1, t2, sig)
    assert len(r1) == len(r2) == 1
    vs = vars_of(t1) | vars_of(t2)
    assert is_instance_mod_theory(r1.unifiers[0], r2.unifiers[0], vs, th)
    assert is_instance_mod_theory(r2.unifiers[0], r1.unifiers[0], vs, th)


def test_unify_ax_completeness_bruteforce(th, sig):
    universe = ground_universe(sig, th)
    x, y = V("x", "Nonce"), V("y", "Nonce")
    cases = [
        (f("*", x, y), f("*", nonce("a", "ra"), nonce("b", "rb"))),
        (f("*", x, x), f("*", y, y)),
        (f(";", V("X"), V("Y")), f(";", c("a"), c("b"))),
        (f("*", x, nonce("a", "ra")), f("*", nonce("b", "rb"), y)),
    ]
    for t1, t2 in cases:
        res = unify_ax(t1, t2, th)
        assert res.complete
        check_sound(res, t1, t2, th)
        check_complete_on_universe(res, t1, t2, th, universe)


# ---------------------------------------------------------------------------
# unify_equational (variant narrowing)

def test_unify_equational_exp_tower(th, sig):
    y, z = V("y", "Nonce"), V("z", "Nonce")
    na, nb = nonce("a", "ra"), nonce("b", "rb")
    t1 = f("exp", f("exp", c("g"), y), z)
    t2 = f("exp", c("g"), f("*", na, nb))
    res = unify_equational(t1, t2, th)
    assert res.complete
    check_sound(res, t1, t2, th)
    sols = {(s.get(y), s.get(z)) for s in res}
    assert sols == {(na, nb), (nb, na)}
    universe = ground_universe(sig, th)
    check_complete_on_universe(res, t1, t2, th, universe)


def test_unify_equational_cancellation(th):
    k = f("exp", c("g"), nonce("a", "ra"))
    t1 = f("d", k, f("e", k, V("M")))
    t2 = c("b")
    res = unify_equational(t1, t2, th)
    check_sound(res, t1, t2, th)
    assert any(s.get(V("M")) == c("b") for s in res)


def test_unify_equational_reflexive(th):
    t = f("e", V("K", "Key"), V("M"))
    res = unify_equational(t, t, th)
    assert any(not s for s in res)


def test_unify_equational_variant_produces_decrypt_shape(th):
    # unifying an encryption pattern against a bare variable target must
    # include the variant where the message is a decryption that cancels
    t1 = f("d", V("K", "Key"), V("M"))
    t2 = secret("a", "rs")
    res = unify_equational(t1, t2, th)
    check_sound(res, t1, t2, th)
    assert any(
        isinstance(s.get(V("M")), App) and s.get(V("M")).op == "e" for s in res
    )


# ---------------------------------------------------------------------------
# match_ax

def test_match_concat_pair(sig):
    res = match_ax(f(";", V("M1"), V("M")), f(";", c("a"), c("b")), sig)
    assert len(res) == 1
    assert res[0].get(V("M1")) == c("a") and res[0].get(V("M")) == c("b")


def test_match_ac_multiset_splits(sig, th):
    x, y = V("x", "Nonce"), V("y", "Nonce")
    target = f("*", nonce("a", "ra"), f("*", nonce("b", "rb"), f("n", c("i"), Var("ri", "Fresh"))))
    res = match_ax(f("*", x, y), target, sig)
    # soundness
    for s in res:
        assert ax_equal(apply_subst(s, f("*", x, y), sig), target, sig)
    # every 2-block split of the 3-element multiset is covered
    parts = {frozenset([canonical(s.get(x), sig), canonical(s.get(y), sig)]) for s in res}
    assert len(parts) == 3
    assert len(res) == 6  # ordered assignments


def test_match_clash(sig):
    assert match_ax(f("e", V("K", "Key"), V("M")), f(";", c("a"), c("b")), sig) == []


def test_match_requires_consistent_bindings(sig):
    res = match_ax(f(";", V("M"), V("M")), f(";", c("a"), c("b")), sig)
    assert res == []
    res2 = match_ax(f(";", V("M"), V("M")), f(";", c("a"), c("a")), sig)
    assert len(res2) == 1


# ---------------------------------------------------------------------------
# variants

def test_variants_of_decrypt_pattern(th):
    vs = variants_vector((f("d", V("K", "Key"), V("M")),), th)
    assert vs.saturated
    terms = {v[0] for v, _ in vs.variants}
    assert any(isinstance(t, Var) for t in terms)  # the cancelled variant


def test_variants_saturate_on_exp(th):
    vs = variants_vector((f("exp", V("X", "GenvExp"), V("z", "Nonce")),), th)
    assert vs.saturated
    assert len(vs.variants) == 2


def test_unifiers_are_normalized(th):
    # returned bindings must be E',Ax-irreducible
    k = f("exp", c("g"), nonce("a", "ra"))
    t1 = f("e", V("K", "Key"), V("M"))
    t2 = f("e", k, f("d", k, f("e", k, c("b"))))
    res = unify_equational(t1, t2, th)
    for s in res:
        for _, img in s.items():
            assert normalize(img, th) == canonical(img, th.sig)
