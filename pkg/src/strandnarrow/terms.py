"""Order-sorted terms, signatures, substitutions, and axiom-aware canonical forms.

Everything here is immutable after construction; the only stateful service is
``FreshNames``, whose counter bump is atomic (a single ``next()`` on
``itertools.count``).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

FREE = "free"
COMM = "comm"
AC = "assoc-comm"

MSG = "Msg"
FRESH = "Fresh"
PUBLIC = "Public"


class TermError(Exception):
    """Ill-formed term, sort clash, or signature violation."""


class SortError(TermError):
    pass


# ---------------------------------------------------------------------------
# sorts


class SortPoset:
    """Finite poset of sort names given by explicit subsort pairs.

    The reflexive-transitive closure must be antisymmetric (no cycles).
    """

    __slots__ = ("sorts", "pairs", "_above", "_component")

    def __init__(self, sorts: Iterable[str], pairs: Iterable[tuple[str, str]]):
        self.sorts = frozenset(sorts)
        self.pairs = frozenset(pairs)
        for lo, hi in self.pairs:
            if lo not in self.sorts or hi not in self.sorts:
                raise SortError(f"subsort pair ({lo},{hi}) uses undeclared sort")
        above: dict[str, set[str]] = {s: {s} for s in self.sorts}
        changed = True
        while changed:
            changed = False
            for lo, hi in self.pairs:
                new = above[hi] - above[lo]
                if new:
                    above[lo] |= new
                    changed = True
        for s in self.sorts:
            for t in above[s]:
                if t != s and s in above[t]:
                    raise SortError(f"subsort cycle through {s} and {t}")
        self._above = {s: frozenset(up) for s, up in above.items()}
        # connected components of the undirected subsort graph
        parent = {s: s for s in self.sorts}

        def find(x: str) -> str:
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for lo, hi in self.pairs:
            ra, rb = find(lo), find(hi)
            if ra != rb:
                parent[ra] = rb
        self._component = {s: find(s) for s in self.sorts}

    def leq(self, lower: str, upper: str) -> bool:
        return upper in self._above[lower]

    def same_component(self, a: str, b: str) -> bool:
        return self._component[a] == self._component[b]

    def subsorts_of(self, s: str) -> frozenset[str]:
        return frozenset(t for t in self.sorts if self.leq(t, s))

    def max_common_subsorts(self, a: str, b: str) -> list[str]:
        common = [s for s in self.sorts if self.leq(s, a) and self.leq(s, b)]
        return sorted(
            s for s in common
            if not any(o != s and self.leq(s, o) for o in common)
        )

    def __contains__(self, s: str) -> bool:
        return s in self.sorts


# ---------------------------------------------------------------------------
# signature


@dataclass(frozen=True)
class OpDecl:
    name: str
    arg_sorts: tuple[str, ...]
    result: str
    axiom: str = FREE  # FREE | COMM | AC

    @property
    def arity(self) -> int:
        return len(self.arg_sorts)


class Signature:
    """Operator declarations over a sort poset, with per-operator axiom tags.

    Also owns the canonical-form cache: canonical forms are only meaningful
    relative to one signature's axiom tags.
    """

    def __init__(self, poset: SortPoset, decls: Iterable[OpDecl]):
        self.poset = poset
        self.ops: dict[str, OpDecl] = {}
        for d in decls:
            if d.name in self.ops:
                raise TermError(f"duplicate operator declaration: {d.name}")
            for s in d.arg_sorts + (d.result,):
                if s not in poset:
                    raise SortError(f"operator {d.name} uses undeclared sort {s}")
            if "State" in d.arg_sorts:
                raise TermError(
                    f"operator {d.name} takes the state sort as argument"
                )
            if d.axiom in (COMM, AC):
                if d.arity != 2:
                    raise TermError(f"{d.axiom} operator {d.name} must be binary")
                if not poset.same_component(d.arg_sorts[0], d.arg_sorts[1]):
                    raise TermError(
                        f"{d.axiom} operator {d.name} relates sorts in "
                        "different connected components"
                    )
            self.ops[d.name] = d
        self._canon: dict[Term, Term] = {}

    def decl(self, op: str) -> OpDecl:
        try:
            return self.ops[op]
        except KeyError:
            raise TermError(f"unknown operator: {op}") from None

    def axiom(self, op: str) -> str:
        return self.decl(op).axiom

    def has_op(self, op: str) -> bool:
        return op in self.ops


# ---------------------------------------------------------------------------
# terms


class Term:
    __slots__ = ()

    def key(self) -> tuple:
        raise NotImplementedError


class Var(Term):
    __slots__ = ("name", "sort", "_hash")

    def __init__(self, name: str, sort: str):
        self.name = name
        self.sort = sort
        self._hash = hash((name, sort))

    def key(self) -> tuple:
        return (0, self.name, self.sort)

    def __eq__(self, other: object) -> bool:
        return (
            type(other) is Var
            and self.name == other.name
            and self.sort == other.sort
        )

    def __hash__(self) -> int:
        return self._hash

    def __repr__(self) -> str:
        return f"{self.name}:{self.sort}"


class App(Term):
    __slots__ = ("op", "args", "_hash", "_key")

    def __init__(self, op: str, args: tuple[Term, ...] = ()):
        self.op = op
        self.args = args
        self._hash = hash((op, args))
        self._key: tuple | None = None

    def key(self) -> tuple:
        k = self._key
        if k is None:
            k = (1, self.op, len(self.args), tuple(a.key() for a in self.args))
            self._key = k
        return k

    def __eq__(self, other: object) -> bool:
        return (
            type(other) is App
            and self._hash == other._hash
            and self.op == other.op
            and self.args == other.args
        )

    def __hash__(self) -> int:
        return self._hash

    def __repr__(self) -> str:
        if not self.args:
            return self.op
        return f"{self.op}({', '.join(map(repr, self.args))})"


def term_key(t: Term) -> tuple:
    return t.key()


def term_lt(a: Term, b: Term) -> bool:
    return a.key() < b.key()


def vars_of(t: Term, acc: set[Var] | None = None) -> set[Var]:
    if acc is None:
        acc = set()
    stack = [t]
    while stack:
        u = stack.pop()
        if isinstance(u, Var):
            acc.add(u)
        else:
            stack.extend(u.args)
    return acc


def vars_in_order(terms: Iterable[Term]) -> list[Var]:
    """Variables in first-occurrence order across a sequence of terms."""
    seen: dict[Var, None] = {}

    def walk(u: Term) -> None:
        if isinstance(u, Var):
            seen.setdefault(u)
        else:
            for a in u.args:
                walk(a)

    for t in terms:
        walk(t)
    return list(seen)


def is_ground(t: Term) -> bool:
    if isinstance(t, Var):
        return False
    return all(is_ground(a) for a in t.args)


def subterms(t: Term) -> Iterator[Term]:
    yield t
    if isinstance(t, App):
        for a in t.args:
            yield from subterms(a)


def contains_subterm(t: Term, sub: Term, sig: Signature) -> bool:
    """Ax-aware subterm test: some subterm of t is Ax-equal to sub."""
    csub = canonical(sub, sig)
    return any(canonical(u, sig) == csub for u in subterms(canonical(t, sig)))


def positions(t: Term) -> list[tuple[int, ...]]:
    """All non-variable positions of t, root first."""
    out: list[tuple[int, ...]] = []

    def walk(u: Term, pos: tuple[int, ...]) -> None:
        if isinstance(u, App):
            out.append(pos)
            for i, a in enumerate(u.args):
                walk(a, pos + (i,))

    walk(t, ())
    return out


def subterm_at(t: Term, pos: tuple[int, ...]) -> Term:
    for i in pos:
        assert isinstance(t, App)
        t = t.args[i]
    return t


def replace_at(t: Term, pos: tuple[int, ...], new: Term) -> Term:
    if not pos:
        return new
    assert isinstance(t, App)
    i = pos[0]
    args = t.args[:i] + (replace_at(t.args[i], pos[1:], new),) + t.args[i + 1:]
    return App(t.op, args)


# ---------------------------------------------------------------------------
# canonical forms modulo C/AC


def flatten_ac(t: Term, op: str) -> list[Term]:
    """Arguments of t under an AC operator, with nested occurrences flattened."""
    if isinstance(t, App) and t.op == op:
        out: list[Term] = []
        for a in t.args:
            out.extend(flatten_ac(a, op))
        return out
    return [t]


def rebuild_ac(op: str, args: Sequence[Term]) -> Term:
    """Right-nested combination of args under op; args must be non-empty."""
    assert args
    t = args[-1]
    for a in reversed(args[:-1]):
        t = App(op, (a, t))
    return t


def canonical(t: Term, sig: Signature) -> Term:
    """Unique representative of t's Ax-equivalence class.

    AC arguments are flattened and sorted under the total term order; C
    arguments are sorted. Two terms are Ax-equal iff their canonical forms
    are syntactically identical.
    """
    if isinstance(t, Var):
        return t
    cache = sig._canon
    hit = cache.get(t)
    if hit is not None:
        return hit
    args = tuple(canonical(a, sig) for a in t.args)
    tag = sig.axiom(t.op) if sig.has_op(t.op) else FREE
    if tag == AC:
        flat: list[Term] = []
        for a in args:
            flat.extend(flatten_ac(a, t.op))
        flat.sort(key=term_key)
        out = rebuild_ac(t.op, flat)
    elif tag == COMM:
        if args[1].key() < args[0].key():
            args = (args[1], args[0])
        out = App(t.op, args)
    else:
        out = App(t.op, args)
    cache[t] = out
    cache[out] = out
    return out


def ax_equal(t1: Term, t2: Term, sig: Signature) -> bool:
    return canonical(t1, sig) == canonical(t2, sig)


# ---------------------------------------------------------------------------
# sorts of terms


def least_sort(t: Term, sig: Signature) -> str:
    if isinstance(t, Var):
        return t.sort
    return sig.decl(t.op).result


def check_well_sorted(t: Term, sig: Signature, pos: tuple[int, ...] = ()) -> None:
    """Raise SortError naming the offending position if t is ill-sorted."""
    if isinstance(t, Var):
        if t.sort not in sig.poset:
            raise SortError(f"variable {t} has undeclared sort (position {pos})")
        return
    decl = sig.decl(t.op)
    if len(t.args) != decl.arity:
        raise SortError(
            f"operator {t.op} applied to {len(t.args)} arguments, "
            f"declared {decl.arity} (position {pos})"
        )
    for i, (a, want) in enumerate(zip(t.args, decl.arg_sorts)):
        check_well_sorted(a, sig, pos + (i,))
        got = least_sort(a, sig)
        if not sig.poset.leq(got, want):
            raise SortError(
                f"argument {i} of {t.op} has sort {got}, needs <= {want} "
                f"(position {pos + (i,)})"
            )


# ---------------------------------------------------------------------------
# substitutions


class Subst:
    """Sort-preserving variable binding, applied homomorphically.

    Identity bindings are dropped at construction. Composition normalizes to
    an idempotent substitution (applying twice equals applying once).
    """

    __slots__ = ("_m",)

    def __init__(self, mapping: dict[Var, Term] | None = None):
        m = {}
        if mapping:
            for v, t in mapping.items():
                if t != v:
                    m[v] = t
        self._m = m

    def __bool__(self) -> bool:
        return bool(self._m)

    def __contains__(self, v: Var) -> bool:
        return v in self._m

    def __len__(self) -> int:
        return len(self._m)

    def get(self, v: Var) -> Term | None:
        return self._m.get(v)

    def domain(self) -> set[Var]:
        return set(self._m)

    def items(self) -> Iterable[tuple[Var, Term]]:
        return self._m.items()

    def sorted_items(self) -> list[tuple[Var, Term]]:
        return sorted(self._m.items(), key=lambda kv: kv[0].key())

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Subst) and self._m == other._m

    def __hash__(self) -> int:
        return hash(tuple(self.sorted_items()))

    def __repr__(self) -> str:
        inner = ", ".join(f"{v!r} -> {t!r}" for v, t in self.sorted_items())
        return "{" + inner + "}"


EMPTY_SUBST = Subst()


def apply_subst(s: Subst, t: Term, sig: Signature) -> Term:
    """Homomorphic application, re-canonicalized (AC arguments may merge)."""
    if not s:
        return canonical(t, sig)

    def go(u: Term) -> Term:
        if isinstance(u, Var):
            img = s.get(u)
            return img if img is not None else u
        return App(u.op, tuple(go(a) for a in u.args))

    return canonical(go(t), sig)


def validate_subst(s: Subst, sig: Signature) -> None:
    """Check sort preservation and Fresh rigidity; raise SortError on failure."""
    for v, t in s.items():
        if v.sort == FRESH and not isinstance(t, Var):
            raise SortError(f"Fresh variable {v} bound to non-variable {t!r}")
        if not sig.poset.leq(least_sort(t, sig), v.sort):
            raise SortError(
                f"binding {v!r} -> {t!r} is not sort-preserving "
                f"({least_sort(t, sig)} !<= {v.sort})"
            )


def compose(s1: Subst, s2: Subst, sig: Signature) -> Subst:
    """Composition: apply(compose(s1,s2), X) == apply(s2, apply(s1, X)).

    The result is normalized to be idempotent.
    """
    m: dict[Var, Term] = {}
    for v, t in s1.items():
        m[v] = apply_subst(s2, t, sig)
    for v, t in s2.items():
        if v not in s1:
            m[v] = t
    out = Subst(m)
    # idempotency: rewrite the range until it no longer mentions the domain
    for _ in range(len(out) + 1):
        changed = False
        nm: dict[Var, Term] = {}
        for v, t in out.items():
            t2 = apply_subst(out, t, sig)
            if t2 != t:
                changed = True
            nm[v] = t2
        out = Subst(nm)
        if not changed:
            return out
    return out


def restrict(s: Subst, keep: set[Var]) -> Subst:
    return Subst({v: t for v, t in s.items() if v in keep})


def merge_disjoint(s1: Subst, s2: Subst) -> Subst:
    m = dict(s1.items())
    for v, t in s2.items():
        if v in m and m[v] != t:
            raise TermError(f"merge of substitutions clashes on {v!r}")
        m[v] = t
    return Subst(m)


# ---------------------------------------------------------------------------
# fresh variable supply


class FreshNames:
    """Generator of globally fresh variable names.

    The counter bump is a single ``next()`` call, which is atomic, so the
    service is safe to share between concurrent evaluations.
    """

    def __init__(self, start: int = 0):
        self._counter = itertools.count(start)

    def fresh(self, base: str, sort: str) -> Var:
        root = base.split("#", 1)[0] or "v"
        return Var(f"{root}#{next(self._counter)}", sort)


def renaming_for(vs: Sequence[Var], gen: FreshNames) -> Subst:
    return Subst({v: gen.fresh(v.name, v.sort) for v in vs})


def rename_apart(t: Term, gen: FreshNames, sig: Signature) -> tuple[Term, Subst]:
    """Replace all variables by globally fresh ones of identical sorts."""
    ren = renaming_for(vars_in_order([t]), gen)
    return apply_subst(ren, t, sig), ren
