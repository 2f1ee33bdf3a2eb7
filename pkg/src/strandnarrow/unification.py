"""Complete sets of unifiers: syntactic order-sorted, modulo C/AC, and modulo
the full rewrite theory via bounded variant narrowing; plus Ax-matching
re-exported from the matching module.

Soundness is unconditional: every returned unifier really unifies. When a
configured bound truncates the search (AC problem size, variant depth), the
result carries ``complete=False`` instead of failing.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterator

from .matching import match_many
from .terms import (
    term_key,
    AC,
    COMM,
    FREE,
    FRESH,
    App,
    FreshNames,
    Signature,
    Subst,
    Term,
    Var,
    apply_subst,
    canonical,
    compose,
    flatten_ac,
    least_sort,
    positions,
    rebuild_ac,
    renaming_for,
    replace_at,
    restrict,
    subterm_at,
    vars_in_order,
    vars_of,
)
from .theory import EquationalTheory, Rule, normalize, normalize_subst

AC_ARG_LIMIT = 8
AC_BASIS_LIMIT = 16
DEFAULT_VARIANT_BOUND = 5


@dataclass
class UnifierSet:
    unifiers: list[Subst]
    complete: bool = True

    def __iter__(self) -> Iterator[Subst]:
        return iter(self.unifiers)

    def __len__(self) -> int:
        return len(self.unifiers)

    def __bool__(self) -> bool:
        return bool(self.unifiers)


class _Truncated(Exception):
    """Internal: a size bound was hit; the enumeration is sound but incomplete."""


# ---------------------------------------------------------------------------
# unification modulo C/AC axioms (no rules)


def unify_ax(
    t1: Term,
    t2: Term,
    th: EquationalTheory,
    gen: FreshNames | None = None,
    syntactic: bool = False,
) -> UnifierSet:
    sig = th.sig
    gen = gen or FreshNames(1_000_000)
    problem_vars = vars_of(t1) | vars_of(t2)
    out: list[Subst] = []
    complete = True
    try:
        for s in _unify(
            [(canonical(t1, sig), canonical(t2, sig))],
            Subst(),
            sig,
            gen,
            syntactic,
        ):
            out.append(restrict(s, problem_vars))
    except _Truncated:
        complete = False
    return UnifierSet(minimize_unifiers(out, problem_vars, sig), complete)


def unify_syntactic(t1: Term, t2: Term, sig: Signature) -> UnifierSet:
    """Order-sorted syntactic unification; at most one most-general unifier."""
    th = EquationalTheory(sig, [])
    res = unify_ax(t1, t2, th, syntactic=True)
    assert len(res.unifiers) <= 1 or not res.complete
    return res


def _unify(
    pairs: list[tuple[Term, Term]],
    b: Subst,
    sig: Signature,
    gen: FreshNames,
    syntactic: bool,
) -> Iterator[Subst]:
    if not pairs:
        yield b
        return
    (l, r), rest = pairs[0], pairs[1:]
    l = apply_subst(b, l, sig)
    r = apply_subst(b, r, sig)
    if l == r:
        yield from _unify(rest, b, sig, gen, syntactic)
        return
    if isinstance(l, Var) or isinstance(r, Var):
        yield from _unify_var(l, r, rest, b, sig, gen, syntactic)
        return
    assert isinstance(l, App) and isinstance(r, App)
    if l.op != r.op:
        return
    tag = FREE if syntactic else (sig.axiom(l.op) if sig.has_op(l.op) else FREE)
    if tag == COMM:
        for order in ((0, 1), (1, 0)):
            sub = [(l.args[0], r.args[order[0]]), (l.args[1], r.args[order[1]])]
            yield from _unify(sub + rest, b, sig, gen, syntactic)
    elif tag == AC:
        yield from _unify_ac(l, r, rest, b, sig, gen, syntactic)
    else:
        if len(l.args) != len(r.args):
            return
        yield from _unify(list(zip(l.args, r.args)) + rest, b, sig, gen, syntactic)


def _bind(
    v: Var,
    t: Term,
    rest: list[tuple[Term, Term]],
    b: Subst,
    sig: Signature,
    gen: FreshNames,
    syntactic: bool,
) -> Iterator[Subst]:
    b2 = compose(b, Subst({v: t}), sig)
    yield from _unify(rest, b2, sig, gen, syntactic)


def _unify_var(
    l: Term,
    r: Term,
    rest: list[tuple[Term, Term]],
    b: Subst,
    sig: Signature,
    gen: FreshNames,
    syntactic: bool,
) -> Iterator[Subst]:
    if not isinstance(l, Var):
        l, r = r, l
    assert isinstance(l, Var)
    if isinstance(r, Var):
        if l.sort == r.sort or sig.poset.leq(r.sort, l.sort):
            yield from _bind(l, r, rest, b, sig, gen, syntactic)
        elif sig.poset.leq(l.sort, r.sort):
            yield from _bind(r, l, rest, b, sig, gen, syntactic)
        else:
            for s in sig.poset.max_common_subsorts(l.sort, r.sort):
                z = gen.fresh(l.name, s)
                b2 = compose(b, Subst({l: z, r: z}), sig)
                yield from _unify(rest, b2, sig, gen, syntactic)
        return
    # variable against a non-variable term
    if l.sort == FRESH:
        return
    if l in vars_of(r):
        return
    if not sig.poset.leq(least_sort(r, sig), l.sort):
        return
    yield from _bind(l, r, rest, b, sig, gen, syntactic)


# --- elementary AC case (Stickel-style basis enumeration) -------------------


def _unify_ac(
    l: App,
    r: App,
    rest: list[tuple[Term, Term]],
    b: Subst,
    sig: Signature,
    gen: FreshNames,
    syntactic: bool,
) -> Iterator[Subst]:
    op = l.op
    left = Counter(flatten_ac(l, op))
    right = Counter(flatten_ac(r, op))
    common = left & right
    left -= common
    right -= common
    if not left and not right:
        yield from _unify(rest, b, sig, gen, syntactic)
        return
    if not left or not right:
        return  # no identity element: nothing can absorb the remainder
    if (
        sum(left.values()) > AC_ARG_LIMIT
        or sum(right.values()) > AC_ARG_LIMIT
    ):
        raise _Truncated
    l_items = sorted(left, key=term_key)
    r_items = sorted(right, key=term_key)
    l_mult = [left[x] for x in l_items]
    r_mult = [right[x] for x in r_items]
    basis = _dioph_basis(l_mult, r_mult)
    if len(basis) > AC_BASIS_LIMIT:
        raise _Truncated
    arg_sort = sig.decl(op).arg_sorts[0]
    items = l_items + r_items
    is_var = [isinstance(x, Var) for x in items]
    n = len(items)
    for subset in _subsets(basis):
        totals = [sum(s[i] for s in subset) for i in range(n)]
        if any(tot == 0 for tot in totals):
            continue
        if any(not is_var[i] and totals[i] != 1 for i in range(n)):
            continue
        fresh = [gen.fresh("ac", arg_sort) for _ in subset]
        new_pairs: list[tuple[Term, Term]] = []
        ok = True
        for i, item in enumerate(items):
            combo: list[Term] = []
            for k, s in enumerate(subset):
                combo.extend([fresh[k]] * s[i])
            value = rebuild_ac(op, combo) if len(combo) > 1 else combo[0]
            if is_var[i]:
                if len(combo) > 1 and not sig.poset.leq(
                    sig.decl(op).result, item.sort
                ):
                    ok = False
                    break
                new_pairs.append((item, value))
            else:
                new_pairs.append((value, item))
        if ok:
            yield from _unify(new_pairs + rest, b, sig, gen, syntactic)


def _dioph_basis(a: list[int], bm: list[int]) -> list[tuple[int, ...]]:
    """Minimal non-negative solutions of sum(a_i x_i) == sum(b_j y_j), as
    concatenated (x, y) vectors, excluding zero."""
    xb = max(bm)
    yb = max(a)
    sols: list[tuple[int, ...]] = []

    def gen_side(bounds: list[int], coeffs: list[int]):
        out: dict[int, list[tuple[int, ...]]] = {}

        def go(i: int, acc: tuple[int, ...], total: int) -> None:
            if i == len(coeffs):
                out.setdefault(total, []).append(acc)
                return
            for v in range(bounds[i] + 1):
                go(i + 1, acc + (v,), total + coeffs[i] * v)

        go(0, (), 0)
        return out

    lefts = gen_side([xb] * len(a), a)
    rights = gen_side([yb] * len(bm), bm)
    for total, xs in lefts.items():
        if total == 0:
            continue
        for x in xs:
            for y in rights.get(total, ()):
                sols.append(x + y)
    minimal: list[tuple[int, ...]] = []
    for s in sorted(sols, key=sum):
        if not any(all(m[i] <= s[i] for i in range(len(s))) for m in minimal):
            minimal.append(s)
    return minimal


def _subsets(basis: list[tuple[int, ...]]) -> Iterator[list[tuple[int, ...]]]:
    n = len(basis)
    for mask in range(1, 1 << n):
        yield [basis[i] for i in range(n) if mask & (1 << i)]


# ---------------------------------------------------------------------------
# unifier minimization


def subsumes_subst(
    general: Subst, inst: Subst, over: set[Var], sig: Signature
) -> bool:
    """True if some rho instantiates `general` into `inst` over the given vars."""
    pairs = [
        (apply_subst(general, v, sig), apply_subst(inst, v, sig)) for v in over
    ]
    for _ in match_many(pairs, sig):
        return True
    return False


def minimize_unifiers(
    unifiers: list[Subst], over: set[Var], sig: Signature
) -> list[Subst]:
    """Drop instances of earlier/more-general unifiers; deterministic order."""
    ordered = sorted(
        unifiers, key=lambda s: tuple((v.key(), t.key()) for v, t in s.sorted_items())
    )
    kept: list[Subst] = []
    for cand in ordered:
        if any(subsumes_subst(k, cand, over, sig) for k in kept):
            continue
        kept = [k for k in kept if not subsumes_subst(cand, k, over, sig)]
        kept.append(cand)
    return kept


# ---------------------------------------------------------------------------
# variants by folding narrowing, and full equational unification


@dataclass
class VariantSet:
    variants: list[tuple[tuple[Term, ...], Subst]]
    saturated: bool
    complete: bool = True


def _canonical_vector(
    terms: tuple[Term, ...]
) -> tuple[tuple[Term, ...], dict[Var, Var]]:
    """Rename vector variables to a call-independent canonical naming."""
    fwd: dict[Var, Var] = {}
    for i, v in enumerate(vars_in_order(terms)):
        fwd[v] = Var(f"$c{i}", v.sort)

    def go(t: Term) -> Term:
        if isinstance(t, Var):
            return fwd.get(t, t)
        return App(t.op, tuple(go(a) for a in t.args))

    return tuple(go(t) for t in terms), fwd


def variants_vector(
    terms: tuple[Term, ...],
    th: EquationalTheory,
    bound: int = DEFAULT_VARIANT_BOUND,
    gen: FreshNames | None = None,
) -> VariantSet:
    """Normalized variants of a term vector under E' modulo Ax, folded.

    Substitutions share variables across vector components. Results are in a
    canonical variable space; use unify_equational for end-user unification.
    """
    gen = gen or FreshNames(2_000_000)
    key_vec, fwd = _canonical_vector(tuple(canonical(t, th.sig) for t in terms))
    cache = _variant_cache(th)
    hit = cache.get((key_vec, bound))
    if hit is None:
        hit = _compute_variants(key_vec, th, bound)
        cache[(key_vec, bound)] = hit
    # translate back: canonical vars -> original, everything else freshened
    back = {cv: v for v, cv in fwd.items()}
    extra: dict[Var, Var] = {}

    def tr(t: Term) -> Term:
        if isinstance(t, Var):
            if t in back:
                return back[t]
            if t not in extra:
                extra[t] = gen.fresh(t.name, t.sort)
            return extra[t]
        return App(t.op, tuple(tr(a) for a in t.args))

    out: list[tuple[tuple[Term, ...], Subst]] = []
    for vec, theta in hit.variants:
        vec2 = tuple(canonical(tr(t), th.sig) for t in vec)
        theta2 = Subst({back[v]: canonical(tr(t), th.sig) for v, t in theta.items() if v in back})
        out.append((vec2, theta2))
    return VariantSet(out, hit.saturated, hit.complete)


def _variant_cache(th: EquationalTheory) -> dict:
    cache = getattr(th, "_variant_cache", None)
    if cache is None:
        cache = {}
        th._variant_cache = cache
    return cache


def _compute_variants(
    vec: tuple[Term, ...], th: EquationalTheory, bound: int
) -> VariantSet:
    sig = th.sig
    gen = FreshNames(3_000_000)
    base_vars = set(vars_in_order(vec))
    start = tuple(normalize(t, th) for t in vec)
    collected: list[tuple[tuple[Term, ...], Subst]] = [(start, Subst())]
    frontier = [(start, Subst())]
    complete = True
    saturated = False
    for _ in range(bound):
        if not frontier:
            saturated = True
            break
        new_frontier: list[tuple[tuple[Term, ...], Subst]] = []
        for vec_cur, theta in frontier:
            for ci, t in enumerate(vec_cur):
                for pos in positions(t):
                    sub = subterm_at(t, pos)
                    for rule in th.rules:
                        ren = renaming_for(
                            vars_in_order([rule.lhs, rule.rhs]), gen
                        )
                        lhs = apply_subst(ren, rule.lhs, sig)
                        rhs = apply_subst(ren, rule.rhs, sig)
                        res = unify_ax(sub, lhs, th, gen=gen)
                        if not res.complete:
                            complete = False
                        for sigma in res:
                            replaced = replace_at(t, pos, rhs)
                            new_vec = []
                            for cj, u in enumerate(vec_cur):
                                src = replaced if cj == ci else u
                                new_vec.append(
                                    normalize(apply_subst(sigma, src, sig), th)
                                )
                            theta2 = restrict(
                                compose(theta, sigma, sig), base_vars
                            )
                            theta2 = normalize_subst(theta2, th)
                            cand = (tuple(new_vec), theta2)
                            if not _variant_subsumed(cand, collected, base_vars, sig):
                                collected.append(cand)
                                new_frontier.append(cand)
        frontier = new_frontier
    else:
        saturated = not frontier
    return VariantSet(collected, saturated, complete)


def _variant_subsumed(
    cand: tuple[tuple[Term, ...], Subst],
    collected: list[tuple[tuple[Term, ...], Subst]],
    base_vars: set[Var],
    sig: Signature,
) -> bool:
    vec, theta = cand
    for vec0, theta0 in collected:
        pairs = [(v0, v1) for v0, v1 in zip(vec0, vec)]
        pairs += [
            (apply_subst(theta0, x, sig), apply_subst(theta, x, sig))
            for x in base_vars
        ]
        for _ in match_many(pairs, sig):
            return True
    return False


def unify_equational(
    t1: Term,
    t2: Term,
    th: EquationalTheory,
    bound: int = DEFAULT_VARIANT_BOUND,
    gen: FreshNames | None = None,
) -> UnifierSet:
    """Unifiers modulo the full theory E' + Ax via bounded variant narrowing.

    complete=True only when variant generation saturated within the bound and
    no AC subproblem was truncated. Results are computed once per problem
    shape (modulo variable naming) and replayed with call-local fresh names.
    """
    gen = gen or FreshNames(4_000_000)
    sig = th.sig
    key_vec, fwd = _canonical_vector(
        (canonical(t1, sig), canonical(t2, sig))
    )
    cache = _ue_cache(th)
    hit = cache.get((key_vec, bound))
    if hit is None:
        hit = _unify_equational_core(key_vec, th, bound)
        cache[(key_vec, bound)] = hit
    core, complete = hit
    back = {cv: v for v, cv in fwd.items()}
    extra: dict[Var, Var] = {}

    def tr(t: Term) -> Term:
        if isinstance(t, Var):
            if t in back:
                return back[t]
            if t not in extra:
                extra[t] = gen.fresh(t.name, t.sort)
            return extra[t]
        return App(t.op, tuple(tr(a) for a in t.args))

    out = []
    for s in core:
        extra.clear()
        out.append(Subst({
            back[v]: canonical(tr(img), sig)
            for v, img in s.items() if v in back
        }))
    return UnifierSet(out, complete)


def _ue_cache(th: EquationalTheory) -> dict:
    cache = getattr(th, "_ue_cache", None)
    if cache is None:
        cache = {}
        th._ue_cache = cache
    return cache


def _unify_equational_core(
    vec: tuple[Term, Term], th: EquationalTheory, bound: int
) -> tuple[list[Subst], bool]:
    gen = FreshNames(4_500_000)
    t1, t2 = vec
    problem_vars = vars_of(t1) | vars_of(t2)
    vs = variants_vector(vec, th, bound, gen)
    out: list[Subst] = []
    complete = vs.saturated and vs.complete
    for (v1, v2), theta in vs.variants:
        res = unify_ax(v1, v2, th, gen=gen)
        if not res.complete:
            complete = False
        for tau in res:
            sigma = restrict(compose(theta, tau, th.sig), problem_vars)
            out.append(normalize_subst(sigma, th))
    return minimize_unifiers(out, problem_vars, th.sig), complete
