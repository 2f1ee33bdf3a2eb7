"""Matching modulo per-operator C/AC axioms.

A matcher instantiates the pattern side only; the target is fixed. Fresh
variables are rigid: a Fresh-sorted pattern variable matches nothing but a
variable. All matchers are enumerated by backtracking generators.
"""

from __future__ import annotations

from collections import Counter
from typing import Iterator

from .terms import (
    term_key,
    AC,
    COMM,
    FRESH,
    App,
    Signature,
    Subst,
    Term,
    Var,
    canonical,
    flatten_ac,
    least_sort,
    rebuild_ac,
)


def match_many(
    pairs: list[tuple[Term, Term]],
    sig: Signature,
    bindings: Subst | None = None,
) -> Iterator[Subst]:
    """All simultaneous matchers for (pattern, target) pairs under one binding."""
    targets = [(p, canonical(t, sig)) for p, t in pairs]
    yield from _solve(targets, bindings or Subst(), sig)


def match_ax(pattern: Term, target: Term, sig: Signature) -> list[Subst]:
    return list(match_many([(pattern, target)], sig))


def _solve(
    pairs: list[tuple[Term, Term]], b: Subst, sig: Signature
) -> Iterator[Subst]:
    if not pairs:
        yield b
        return
    (p, t), rest = pairs[0], pairs[1:]
    if isinstance(p, Var):
        bound = b.get(p)
        if bound is not None:
            if canonical(bound, sig) == t:
                yield from _solve(rest, b, sig)
            return
        if p.sort == FRESH and not isinstance(t, Var):
            return
        if not sig.poset.leq(least_sort(t, sig), p.sort):
            return
        m = dict(b.items())
        m[p] = t
        yield from _solve(rest, Subst(m), sig)
        return
    if not isinstance(t, App) or t.op != p.op:
        return
    tag = sig.axiom(p.op) if sig.has_op(p.op) else "free"
    if tag == COMM:
        for order in ((0, 1), (1, 0)):
            sub = [(p.args[0], t.args[order[0]]), (p.args[1], t.args[order[1]])]
            yield from _solve(sub + rest, b, sig)
    elif tag == AC:
        p_items = flatten_ac(p, p.op)
        t_items = flatten_ac(t, t.op)
        for b2 in _match_ac(p.op, p_items, t_items, b, sig):
            yield from _solve(rest, b2, sig)
    else:
        if len(p.args) != len(t.args):
            return
        yield from _solve(list(zip(p.args, t.args)) + rest, b, sig)


def _match_ac(
    op: str,
    p_items: list[Term],
    t_items: list[Term],
    b: Subst,
    sig: Signature,
) -> Iterator[Subst]:
    """Multiset matching under one AC operator.

    Non-variable pattern items consume exactly one target item each; variable
    items take a non-empty sub-multiset (recombined under op). Bound variables
    consume their value's flattened multiset.
    """
    remaining = Counter(t_items)

    # peel off items already forced by existing bindings
    free_vars: list[Var] = []
    rigid: list[Term] = []
    for it in p_items:
        if isinstance(it, Var):
            bound = b.get(it)
            if bound is None:
                free_vars.append(it)
                continue
            need = Counter(flatten_ac(canonical(bound, sig), op))
            if not _counter_leq(need, remaining):
                return
            remaining -= need
        else:
            rigid.append(it)

    def place_rigid(idx: int, rem: Counter, bb: Subst) -> Iterator[tuple[Counter, Subst]]:
        if idx == len(rigid):
            yield rem, bb
            return
        pat = rigid[idx]
        tried: set[Term] = set()
        for cand in list(rem):
            if cand in tried or rem[cand] == 0:
                continue
            tried.add(cand)
            for b2 in _solve([(pat, cand)], bb, sig):
                rem2 = rem.copy()
                rem2[cand] -= 1
                if rem2[cand] == 0:
                    del rem2[cand]
                yield from place_rigid(idx + 1, rem2, b2)

    for rem, bb in place_rigid(0, remaining, b):
        yield from _assign_vars(op, free_vars, rem, bb, sig)


def _assign_vars(
    op: str,
    vs: list[Var],
    rem: Counter,
    b: Subst,
    sig: Signature,
) -> Iterator[Subst]:
    if not vs:
        if not rem:
            yield b
        return
    v, tail = vs[0], vs[1:]
    items = sorted(rem.elements(), key=term_key)
    if len(items) < len(vs):
        return
    if not tail:
        choices: list[list[Term]] = [items]
    else:
        choices = _nonempty_submultisets(items, len(items) - len(tail))
    seen: set[Term] = set()
    for chosen in choices:
        val = canonical(rebuild_ac(op, chosen), sig)
        if val in seen:
            continue
        seen.add(val)
        if v.sort == FRESH and not isinstance(val, Var):
            continue
        if not sig.poset.leq(least_sort(val, sig), v.sort):
            continue
        m = dict(b.items())
        m[v] = val
        rem2 = rem - Counter(chosen)
        yield from _assign_vars(op, tail, rem2, Subst(m), sig)


def _nonempty_submultisets(items: list[Term], max_size: int) -> list[list[Term]]:
    """Distinct non-empty sub-multisets of a sorted item list, size-capped."""
    distinct: list[tuple[Term, int]] = []
    for it in items:
        if distinct and distinct[-1][0] == it:
            distinct[-1] = (it, distinct[-1][1] + 1)
        else:
            distinct.append((it, 1))
    out: list[list[Term]] = []

    def go(i: int, acc: list[Term]) -> None:
        if i == len(distinct):
            if acc:
                out.append(list(acc))
            return
        it, mult = distinct[i]
        for k in range(0, mult + 1):
            if len(acc) + k > max_size:
                break
            go(i + 1, acc + [it] * k)

    go(0, [])
    return out


def _counter_leq(a: Counter, bc: Counter) -> bool:
    return all(bc[k] >= n for k, n in a.items())


def matches(pattern: Term, target: Term, sig: Signature) -> bool:
    for _ in match_many([(pattern, target)], sig):
        return True
    return False
