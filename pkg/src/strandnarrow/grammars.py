"""Unreachability grammars: membership filtering and a bounded inductive
soundness checker for user-supplied grammars.

A grammar describes terms the intruder can never learn. A state carrying such
a term as a positive fact is unreachable and may be discarded. Productions
have the surface form

    grl <premises> => <pattern> inL .

with premises drawn from `<var> inL`, `<term> notInI`, `<term> notLeq
<pattern>`. All patterns refer to normal forms.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable

from .matching import match_ax, matches
from .terms import (
    App,
    FreshNames,
    Signature,
    Subst,
    Term,
    Var,
    apply_subst,
    ax_equal,
    canonical,
    renaming_for,
    vars_in_order,
    vars_of,
)
from .theory import EquationalTheory, is_irreducible, normalize
from .unification import unify_ax, unify_equational


@dataclass(frozen=True)
class Premise:
    kind: str  # "inL" | "notInI" | "notLeq"
    term: Term
    pattern: Term | None  # the exception pattern, notLeq only


@dataclass(frozen=True)
class Production:
    premises: tuple[Premise, ...]
    conclusion: Term


_RENAMED: dict[int, "Grammar"] = {}


@dataclass(frozen=True)
class Grammar:
    productions: tuple[Production, ...]

    def renamed(self) -> "Grammar":
        """Productions with variables moved into a reserved namespace so they
        can never collide with state variables."""
        hit = _RENAMED.get(id(self))
        if hit is not None:
            return hit
        out = []
        for i, prod in enumerate(self.productions):
            terms = [prod.conclusion] + [p.term for p in prod.premises]
            terms += [p.pattern for p in prod.premises if p.pattern is not None]
            ren = Subst({
                v: Var(f"$g{i}_{v.name}", v.sort) for v in vars_in_order(terms)
            })

            def tr(t: Term | None) -> Term | None:
                if t is None:
                    return None
                return _plain_apply(ren, t)

            out.append(Production(
                tuple(Premise(p.kind, tr(p.term), tr(p.pattern))
                      for p in prod.premises),
                tr(prod.conclusion),
            ))
        g = Grammar(tuple(out))
        _RENAMED[id(self)] = g
        return g


def _plain_apply(s: Subst, t: Term) -> Term:
    if isinstance(t, Var):
        img = s.get(t)
        return img if img is not None else t
    return App(t.op, tuple(_plain_apply(s, a) for a in t.args))


def validate_grammar(g: Grammar, th: EquationalTheory) -> list[str]:
    """Load-time checks; returns error strings (empty if well-formed)."""
    errors: list[str] = []
    for i, prod in enumerate(g.productions):
        cv = vars_of(prod.conclusion)
        for p in prod.premises:
            if not vars_of(p.term) <= cv:
                loose = ", ".join(
                    v.name for v in sorted(vars_of(p.term) - cv, key=Var.key)
                )
                errors.append(
                    f"production {i}: premise variable(s) {loose} do not "
                    "occur in the conclusion"
                )
        if not is_irreducible(prod.conclusion, th):
            errors.append(
                f"production {i}: conclusion {prod.conclusion!r} is not in "
                "normal form"
            )
    return errors


# ---------------------------------------------------------------------------
# membership (used by the search as an unreachability filter)


def grammar_member(
    t: Term,
    g: Grammar,
    negatives: Iterable[Term],
    th: EquationalTheory,
    memo: dict | None = None,
) -> bool:
    """Backward-chaining membership of t in the grammar's language, relative
    to the state's negative knowledge (for notInI premises)."""
    neg = frozenset(canonical(x, th.sig) for x in negatives)
    if memo is None:
        memo = {}
    return _member(normalize(t, th), g.renamed(), neg, th, memo, 0)


def _member(
    t: Term,
    g: Grammar,
    neg: frozenset,
    th: EquationalTheory,
    memo: dict,
    depth: int,
) -> bool:
    key = (t, neg)
    hit = memo.get(key)
    if hit is not None:
        return hit
    if depth > 50:
        return False
    memo[key] = False  # cuts cycles; overwritten on success
    sig = th.sig
    for prod in g.productions:
        for s in match_ax(prod.conclusion, t, sig):
            if _premises_hold(prod, s, g, neg, th, memo, depth, t):
                memo[key] = True
                return True
    return False


def _premises_hold(
    prod: Production,
    s: Subst,
    g: Grammar,
    neg: frozenset,
    th: EquationalTheory,
    memo: dict,
    depth: int,
    whole: Term,
) -> bool:
    sig = th.sig
    for p in prod.premises:
        val = apply_subst(s, p.term, sig)
        if p.kind == "inL":
            if val == whole:  # premises must bind proper subterms
                return False
            if not _member(val, g, neg, th, memo, depth + 1):
                return False
        elif p.kind == "notInI":
            if canonical(val, sig) not in neg:
                return False
        elif p.kind == "notLeq":
            if matches(p.pattern, val, sig):
                return False
    return True


# ---------------------------------------------------------------------------
# bounded soundness checking of user-supplied grammars


@dataclass
class SoundnessReport:
    verdict: str  # "checked (bounded)" | "unsound" | "load error"
    problems: int
    diagnostics: list[str]

    @property
    def ok(self) -> bool:
        return self.verdict == "checked (bounded)"


def check_grammar_soundness(
    g: Grammar, spec, bound: int = 200
) -> SoundnessReport:
    """Search for a production instance the intruder could actually produce
    from non-member inputs: a predecessor state carrying a member term as a
    positive fact while all of its own goals escape the language.

    The check is bounded by the number of unification problems attempted; a
    clean result is reported as "checked (bounded)", never as a proof.
    """
    from .protocol import RECV, compile_rules  # deferred: avoid import cycle

    th = spec.theory
    sig = spec.sig
    errors = validate_grammar(g, th)
    if errors:
        return SoundnessReport("load error", 0, errors)
    gren = g.renamed()
    rules = compile_rules(spec)
    gen = FreshNames(7_000_000)
    problems = 0
    diags: list[str] = []
    for pi, prod in enumerate(gren.productions):
        for rule in rules.introductions:
            # rename the rule's strand apart from the production
            all_vars = vars_in_order([m.term for m in rule.msgs])
            ren = renaming_for(all_vars, gen)
            send = apply_subst(ren, rule.send_term, sig)
            prefix = [
                (m.sign, apply_subst(ren, m.term, sig))
                for m in rule.msgs[: rule.send_index]
            ]
            if problems >= bound:
                return SoundnessReport("checked (bounded)", problems, diags)
            problems += 1
            res = unify_equational(prod.conclusion, send, th, gen=gen)
            for s in res:
                if not _instance_applicable(prod, s, sig):
                    continue
                assumptions = [
                    canonical(apply_subst(s, p.term, sig), sig)
                    for p in prod.premises
                    if p.kind == "inL"
                ]
                if not _assumptions_satisfiable(assumptions, gren, th):
                    continue
                goals = [
                    normalize(apply_subst(s, t, sig), th)
                    for sign, t in prefix
                    if sign == RECV
                ]
                if all(
                    not _member_lenient(gl, gren, assumptions, th, 0)
                    for gl in goals
                ):
                    diags.append(
                        f"unsound production {pi}: {rule.rule_id} can produce "
                        f"{apply_subst(s, prod.conclusion, sig)!r} from "
                        f"non-member inputs {goals!r}"
                    )
                    return SoundnessReport("unsound", problems, diags)
    return SoundnessReport("checked (bounded)", problems, diags)


def _instance_applicable(prod: Production, s: Subst, sig: Signature) -> bool:
    """False when a notLeq exception definitely matches the instantiated
    premise term, i.e. the production never claims this instance."""
    for p in prod.premises:
        if p.kind == "notLeq":
            val = apply_subst(s, p.term, sig)
            if matches(p.pattern, val, sig):
                return False
    return True


def _assumptions_satisfiable(
    assumptions: list[Term], g: Grammar, th: EquationalTheory
) -> bool:
    """An inL premise instantiated to a non-variable must itself be a
    potential member, else the production instance claims nothing."""
    for a in assumptions:
        if isinstance(a, Var):
            continue
        if not _member_lenient(a, g, [x for x in assumptions if x != a], th, 0):
            return False
    return True


def _member_lenient(
    t: Term,
    g: Grammar,
    assumptions: list[Term],
    th: EquationalTheory,
    depth: int,
) -> bool:
    """Optimistic membership: True unless t definitely escapes the language
    under every instantiation. Used only to avoid false unsoundness alarms."""
    sig = th.sig
    t = normalize(t, th)
    if isinstance(t, Var):
        return True
    if any(ax_equal(t, a, sig) for a in assumptions):
        return True
    if depth > 3:
        return False
    gen = FreshNames(8_000_000)
    for i, prod in enumerate(g.productions):
        # per-use renaming so repeated productions do not alias
        terms = [prod.conclusion] + [p.term for p in prod.premises]
        ren = renaming_for(vars_in_order(terms), gen)
        conclusion = apply_subst(ren, prod.conclusion, sig)
        res = unify_ax(conclusion, t, th, gen=gen)
        for s in res:
            ok = True
            for p in prod.premises:
                val = apply_subst(s, _plain_apply(ren, p.term), sig)
                if p.kind == "notLeq":
                    if matches(p.pattern, val, sig):
                        ok = False
                        break
                elif p.kind == "inL":
                    if val == t:
                        ok = False
                        break
                    if not _member_lenient(val, g, assumptions, th, depth + 1):
                        ok = False
                        break
                # notInI: some reachable state may carry the negative fact
            if ok:
                return True
    return False
