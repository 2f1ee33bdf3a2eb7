"""Convergent rewrite rules modulo axioms, and normalization to canonical forms."""

from __future__ import annotations

from dataclasses import dataclass

from .matching import match_many
from .terms import (
    AC,
    App,
    Signature,
    Subst,
    Term,
    TermError,
    Var,
    apply_subst,
    canonical,
    flatten_ac,
    rebuild_ac,
    vars_of,
)

DEFAULT_REWRITE_BUDGET = 10_000


class RewriteBudgetError(TermError):
    """Rewrite-step budget exceeded; the declared theory is likely non-terminating."""


@dataclass(frozen=True)
class Rule:
    lhs: Term
    rhs: Term

    def __post_init__(self) -> None:
        if isinstance(self.lhs, Var):
            raise TermError("rewrite rule left side must be a non-variable")
        if not vars_of(self.rhs) <= vars_of(self.lhs):
            raise TermError(
                f"rule {self.lhs!r} -> {self.rhs!r} introduces variables on the right"
            )


class EquationalTheory:
    """Oriented rules E' applied modulo the signature's C/AC axiom tags.

    Confluence, termination, and coherence modulo the axioms are declared
    assumptions of the input theory, not checked here; a step budget guards
    against non-terminating inputs.
    """

    def __init__(
        self,
        sig: Signature,
        rules: list[Rule] | None = None,
        budget: int = DEFAULT_REWRITE_BUDGET,
    ):
        self.sig = sig
        self.rules = tuple(rules or ())
        self.budget = budget
        self._nf_cache: dict[Term, Term] = {}

    def __repr__(self) -> str:
        return f"EquationalTheory({len(self.rules)} rules)"


def _root_rewrite(t: Term, th: EquationalTheory) -> Term | None:
    """One rewrite at the root of a canonical term, or None."""
    sig = th.sig
    if not isinstance(t, App):
        return None
    for rule in th.rules:
        lhs = rule.lhs
        if not isinstance(lhs, App) or lhs.op != t.op:
            continue
        if sig.axiom(t.op) == AC:
            # extension behavior: the rule may rewrite a sub-multiset of the
            # flattened arguments, the rest variable keeping the remainder
            flat = flatten_ac(t, t.op)
            pat_len = len(flatten_ac(lhs, t.op))
            if len(flat) > pat_len:
                rest = Var("$rest", sig.decl(t.op).arg_sorts[0])
                ext = canonical(App(t.op, (lhs, rest)), sig)
                for m in match_many([(ext, t)], sig):
                    out = App(t.op, (rule.rhs, m.get(rest)))
                    return apply_subst(m, out, sig)
        for m in match_many([(lhs, t)], sig):
            return apply_subst(m, rule.rhs, sig)
    return None


def normalize(t: Term, th: EquationalTheory) -> Term:
    """The E',Ax-irreducible canonical form of t (innermost strategy)."""
    cached = th._nf_cache.get(t)
    if cached is not None:
        return cached
    steps = [0]
    out = _normalize(canonical(t, th.sig), th, steps)
    th._nf_cache[t] = out
    th._nf_cache[out] = out
    return out


def _normalize(t: Term, th: EquationalTheory, steps: list[int]) -> Term:
    cached = th._nf_cache.get(t)
    if cached is not None:
        return cached
    orig = t
    if isinstance(t, App):
        t = canonical(
            App(t.op, tuple(_normalize(a, th, steps) for a in t.args)), th.sig
        )
    while True:
        nxt = _root_rewrite(t, th)
        if nxt is None:
            break
        steps[0] += 1
        if steps[0] > th.budget:
            raise RewriteBudgetError(
                f"rewrite budget ({th.budget}) exceeded while normalizing"
            )
        t = _normalize(nxt, th, steps)
    th._nf_cache[orig] = t
    th._nf_cache[t] = t
    return t


def normalize_subst(s: Subst, th: EquationalTheory) -> Subst:
    return Subst({v: normalize(t, th) for v, t in s.items()})


def is_irreducible(t: Term, th: EquationalTheory) -> bool:
    return normalize(t, th) == canonical(t, th.sig)
