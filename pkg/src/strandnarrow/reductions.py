"""State-space reduction techniques: public-data filtering, input-first
partial order reduction, inconsistency detection, transition subsumption
(variants I/II/III), and the super-lazy intruder (ghosting, void shortcut,
resuscitation, fresh-generating strand reset)."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable

from .grammars import Grammar, grammar_member
from .matching import match_many, matches
from .protocol import (
    EV_RECV,
    EV_RESUSC,
    EV_SEND,
    Event,
    Fact,
    GHOST,
    NEG,
    POS,
    ProtocolSpec,
    RECV,
    SEND,
    SignedMsg,
    State,
    Strand,
    apply_subst_state,
    canonical_strand,
    make_state,
)
from .terms import (
    term_key,
    App,
    FreshNames,
    Signature,
    Subst,
    Term,
    TermError,
    Var,
    apply_subst,
    canonical,
    contains_subterm,
    renaming_for,
    restrict,
    vars_in_order,
    vars_of,
)
from .theory import EquationalTheory, normalize

SUBSUMPTION_BRANCH_CAP = 10_000


@dataclass(frozen=True)
class ReductionConfig:
    public: bool = True
    input_first: bool = True
    inconsistency: bool = True
    subsumption: bool = True
    super_lazy: bool = True
    grammars: bool = True
    subsumption_variant: str = "III"  # "I" | "II" | "III"

    def __post_init__(self) -> None:
        if self.subsumption_variant not in ("I", "II", "III"):
            raise ValueError(
                f"unknown subsumption variant {self.subsumption_variant!r}"
            )
        if self.super_lazy and self.subsumption and self.subsumption_variant == "I":
            raise ValueError(
                "subsumption variant I folds resuscitated states into their "
                "ghost ancestors; use II or III with the super-lazy intruder"
            )

    @staticmethod
    def none() -> "ReductionConfig":
        return ReductionConfig(
            public=False, input_first=False, inconsistency=False,
            subsumption=False, super_lazy=False, grammars=False,
        )

    @staticmethod
    def all() -> "ReductionConfig":
        return ReductionConfig()

    def enabled_names(self) -> list[str]:
        names = []
        for nm in ("public", "input_first", "inconsistency", "subsumption",
                   "super_lazy", "grammars"):
            if getattr(self, nm):
                names.append(nm)
        return names


# ---------------------------------------------------------------------------
# public data


def filter_public(st: State, spec: ProtocolSpec) -> State:
    """Drop positive facts whose term sort is publicly generable."""
    if not spec.public_filter_enabled():
        return st
    kept = [
        fa for fa in st.facts
        if not (fa.kind == POS and spec.is_public(fa.term))
    ]
    if len(kept) == len(st.facts):
        return st
    return State(st.strands, tuple(kept), st.exchange)


# ---------------------------------------------------------------------------
# input-first partial order reduction


def input_first(st: State, th: EquationalTheory) -> State | None:
    """Move every receive sitting immediately left of a bar into the intruder
    knowledge, exhaustively, as one combined deterministic step.

    Returns None when no receive is in position. Contradictions with existing
    negative facts are left for the inconsistency check.
    """
    strands = list(st.strands)
    facts = list(st.facts)
    prepended: list[Event] = []
    changed = True
    any_change = False
    while changed:
        changed = False
        for i, s in enumerate(strands):
            while s.bar > 0 and s.msgs[s.bar - 1].sign == RECV:
                m = s.msgs[s.bar - 1]
                prepended.insert(0, Event(EV_RECV, m.term))
                facts.append(Fact(POS, m.term))
                s = Strand(s.fresh, s.msgs, s.bar - 1)
                changed = True
                any_change = True
            strands[i] = s
    if not any_change:
        return None
    return make_state(strands, facts, tuple(prepended) + st.exchange, th.sig)


# ---------------------------------------------------------------------------
# inconsistency detection


def is_inconsistent(st: State, th: EquationalTheory) -> str | None:
    """First matching unreachability reason, or None.

    Checks in order: contradictory facts, negative fact already received in
    the past, positive fact using a fresh value its strand has not produced,
    past receive using such a fresh value.
    """
    sig = th.sig
    pos = {canonical(fa.term, sig) for fa in st.facts if fa.kind == POS}
    neg = {canonical(fa.term, sig) for fa in st.facts if fa.kind == NEG}
    both = pos & neg
    if both:
        return "contradictory facts"
    past_recv = {
        canonical(m.term, sig)
        for s in st.strands
        for m in s.past
        if m.sign == RECV
    }
    if neg & past_recv:
        return "negative fact already received"
    declarer: dict[Var, Strand] = {}
    for s in st.strands:
        for v in s.fresh:
            if v in declarer:
                # two strands claiming one unguessable value: no instance
                return "fresh value declared by two strands"
            declarer[v] = s
    def producible(r: Var) -> bool | None:
        s = declarer.get(r)
        if s is None:
            return None  # producer strand not introduced yet: cannot judge
        return any(
            m.sign == SEND and r in vars_of(m.term) for m in s.past
        )

    for t in sorted(pos, key=term_key):
        for r in vars_of(t):
            if r.sort == "Fresh" and producible(r) is False:
                return "positive fact uses an unproduced fresh value"
    for t in sorted(past_recv, key=term_key):
        for r in vars_of(t):
            if r.sort == "Fresh" and producible(r) is False:
                return "past receive uses an unproduced fresh value"
    return None


# ---------------------------------------------------------------------------
# transition subsumption


def _strand_index(st: State) -> dict[tuple, list[Strand]]:
    idx: dict[tuple, list[Strand]] = {}
    for s in st.strands:
        idx.setdefault(s.skeleton(), []).append(s)
    return idx


def subsumes(
    st1: State,
    st2: State,
    th: EquationalTheory,
    cap: int = SUBSUMPTION_BRANCH_CAP,
) -> Subst | None:
    """A substitution placing every positive fact and every non-initial
    strand of st1 inside st2 (same bar positions), or None.

    Exceeding the branch cap counts as no subsumption: the safe direction.
    """
    sig = th.sig
    pos2 = [canonical(fa.term, sig) for fa in st2.facts if fa.kind == POS]
    idx2 = _strand_index(st2)
    fact_items = [fa.term for fa in st1.facts if fa.kind == POS]
    strand_items = [s for s in st1.strands if not s.at_start()]
    # cheap necessary conditions
    roots2 = {t.op for t in pos2 if isinstance(t, App)}
    for t in fact_items:
        if isinstance(t, App) and t.op not in roots2:
            return None
    for s in strand_items:
        if s.skeleton() not in idx2:
            return None

    # most-constrained-first: fewer candidates explored earlier
    jobs: list[tuple[int, list[list[tuple[Term, Term]]]]] = []
    for t in fact_items:
        cands = [[(t, u)] for u in pos2]
        jobs.append((len(cands), cands))
    for s in strand_items:
        cands = []
        for u in idx2[s.skeleton()]:
            cands.append(
                [(pm.term, um.term) for pm, um in zip(s.msgs, u.msgs)]
            )
        jobs.append((len(cands), cands))
    jobs.sort(key=lambda j: j[0])
    budget = [cap]

    def place(k: int, b: Subst) -> Subst | None:
        if k == len(jobs):
            return b
        for pairs in jobs[k][1]:
            budget[0] -= 1
            if budget[0] <= 0:
                return None
            for b2 in match_many(pairs, sig, b):
                got = place(k + 1, b2)
                if got is not None:
                    return got
        return None

    got = place(0, Subst())
    if got is None:
        return None
    return restrict(got, set(vars_in_order(
        [t for t in fact_items]
        + [m.term for s in strand_items for m in s.msgs]
    )))


def resuscitated_version(st1: State, st2: State, th: EquationalTheory) -> bool:
    """Exchange-sequence test telling whether st2 descends from ghosting st1's
    delayed goal and rolling it back (directly or through later steps)."""
    sig = th.sig
    ghosts1 = [canonical(fa.term, sig) for fa in st1.facts if fa.kind == GHOST]
    if not ghosts1:
        return False
    return _resusc_rec(ghosts1, st1.exchange, st2.exchange, th, depth=0)


def _resusc_rec(
    ghosts1: list[Term],
    x1: tuple[Event, ...],
    x2: tuple[Event, ...],
    th: EquationalTheory,
    depth: int,
) -> bool:
    if depth > 8 or not ghosts1:
        return False
    sig = th.sig
    for p, ev in enumerate(x2):
        if ev.kind != EV_RESUSC:
            continue
        m2 = ev.term
        # direct form: x2 minus the marker is an instance of x1, and the
        # ghost's own receive sits after the marker
        x2p = x2[:p] + x2[p + 1:]
        if len(x2p) == len(x1) and _direct_match(ghosts1, x1, x2p, p, m2, sig):
            return True
        # recursive form: an instantiating send for the ghost occurs before
        # the marker; align the suffix and recurse on the rest
        for q in range(p):
            if x2[q].kind != EV_SEND or canonical(x2[q].term, sig) != canonical(m2, sig):
                continue
            for s_at in range(p + 1, len(x2)):
                if x2[s_at].kind != EV_RECV or canonical(x2[s_at].term, sig) != canonical(m2, sig):
                    continue
                if _recursive_match(
                    ghosts1, x1, x2, p, q, s_at, m2, th, depth
                ):
                    return True
    return False


def _events_pairable(e1: Event, e2: Event) -> bool:
    return e1.kind == e2.kind


def _direct_match(
    ghosts1: list[Term],
    x1: tuple[Event, ...],
    x2p: tuple[Event, ...],
    marker_pos: int,
    m2: Term,
    sig: Signature,
) -> bool:
    if any(not _events_pairable(a, b) for a, b in zip(x1, x2p)):
        return False
    recv_positions = [
        j for j in range(marker_pos, len(x2p))
        if x2p[j].kind == EV_RECV
        and canonical(x2p[j].term, sig) == canonical(m2, sig)
        and x1[j].kind == EV_RECV
        and canonical(x1[j].term, sig) in ghosts1
    ]
    if not recv_positions:
        return False
    pairs = [(a.term, b.term) for a, b in zip(x1, x2p)]
    for _ in match_many(pairs, sig):
        return True
    return False


def _recursive_match(
    ghosts1: list[Term],
    x1: tuple[Event, ...],
    x2: tuple[Event, ...],
    p: int,
    q: int,
    s_at: int,
    m2: Term,
    th: EquationalTheory,
    depth: int,
) -> bool:
    sig = th.sig
    tail2 = x2[q + 1:p] + x2[p + 1:]  # L2', L3', M2-, L4'
    if len(tail2) > len(x1):
        return False
    split = len(x1) - len(tail2)
    l1_pat, tail1 = x1[:split], x1[split:]
    if any(not _events_pairable(a, b) for a, b in zip(tail1, tail2)):
        return False
    # the position aligned with M2- must carry a ghost's receive
    m2_tail_idx = (p - q - 1) + (s_at - p - 1)
    if tail1[m2_tail_idx].kind != EV_RECV or canonical(
        tail1[m2_tail_idx].term, sig
    ) not in ghosts1:
        return False
    ghost_term = canonical(tail1[m2_tail_idx].term, sig)
    tail_pairs = [(a.term, b.term) for a, b in zip(tail1, tail2)]
    any_rho = False
    for _ in match_many(tail_pairs, sig):
        any_rho = True
        break
    if not any_rho:
        return False
    # L1'' = longest run of events mentioning the instantiated ghost term,
    # immediately before the instantiating send
    head2 = x2[:q]
    cut = q
    while cut > 0 and contains_subterm(head2[cut - 1].term, m2, sig):
        cut -= 1
    l1_already = head2[:cut]
    # (a) the remaining prefixes align under the same matcher
    if len(l1_pat) == len(l1_already) and all(
        _events_pairable(a, b) for a, b in zip(l1_pat, l1_already)
    ):
        full_pairs = tail_pairs + [
            (a.term, b.term) for a, b in zip(l1_pat, l1_already)
        ]
        for _ in match_many(full_pairs, sig):
            return True
    # (b) peel this resuscitation off and recurse
    rest_ghosts = [g for g in ghosts1 if g != ghost_term]
    shorter2 = l1_already + x2[q + 1:p] + x2[p + 1:]
    return _resusc_rec(rest_ghosts, x1, shorter2, th, depth + 1)


def subsumption_holds(
    st1: State,
    st2: State,
    th: EquationalTheory,
    variant: str = "III",
    cap: int = SUBSUMPTION_BRANCH_CAP,
) -> bool:
    """Fold check: does st1 subsume st2 under the configured variant?"""
    theta = subsumes(st1, st2, th, cap)
    if theta is None:
        return False
    if variant == "I":
        return True
    if variant == "II":
        has_ghost = any(fa.kind == GHOST for fa in st1.facts)
        has_marker = any(e.kind == EV_RESUSC for e in st2.exchange)
        return not (has_ghost and has_marker)
    return not resuscitated_version(st1, st2, th)


def subsumption_III(st1: State, st2: State, th: EquationalTheory) -> bool:
    return subsumption_holds(st1, st2, th, "III")


# ---------------------------------------------------------------------------
# super-lazy intruder


def intruder_seed_patterns(spec: ProtocolSpec) -> list[Term]:
    """Payload patterns of single-send intruder strands: whatever they match
    is generable outright."""
    out = []
    for _, s in spec.intruder:
        if len(s.msgs) == 1 and s.msgs[0].sign == SEND:
            out.append(s.msgs[0].term)
    return out


def intruder_ops(spec: ProtocolSpec) -> set[str]:
    """Operators f with an intruder strand [-(X1),...,-(Xk),+(f(X1..Xk))]."""
    out: set[str] = set()
    for _, s in spec.intruder:
        if len(s.msgs) < 2 or s.msgs[-1].sign != SEND:
            continue
        if any(m.sign != RECV for m in s.msgs[:-1]):
            continue
        ins = [m.term for m in s.msgs[:-1]]
        if not all(isinstance(t, Var) for t in ins):
            continue
        if len(set(ins)) != len(ins):
            continue
        top = s.msgs[-1].term
        if isinstance(top, App) and list(top.args) == ins:
            out.add(top.op)
    return out


_LAZY_CACHE: dict[int, tuple[list[Term], set[str]]] = {}


def _lazy_tables(spec: ProtocolSpec) -> tuple[list[Term], set[str]]:
    hit = _LAZY_CACHE.get(id(spec))
    if hit is None:
        # seed patterns live in a reserved namespace: matching never needs
        # per-call renaming because state variables cannot collide with them
        seeds = []
        for k, pat in enumerate(intruder_seed_patterns(spec)):
            ren = Subst({
                v: Var(f"$seed{k}_{v.name}", v.sort)
                for v in vars_in_order([pat])
            })
            seeds.append(apply_subst(ren, pat, spec.sig))
        hit = (seeds, intruder_ops(spec))
        _LAZY_CACHE[id(spec)] = hit
    return hit


def is_super_lazy(
    t: Term, st: State, spec: ProtocolSpec, th: EquationalTheory
) -> bool:
    """Membership of t in the trivially-generable language w.r.t. st."""
    sig = th.sig
    neg = {canonical(fa.term, sig) for fa in st.facts if fa.kind == NEG}
    seeds, ops = _lazy_tables(spec)

    def lazy(u: Term) -> bool:
        if canonical(u, sig) in neg:
            return False
        if isinstance(u, Var):
            return True
        if any(matches(pat, u, sig) for pat in seeds):
            return True
        if u.op in ops:
            return all(lazy(a) for a in u.args)
        return False

    return lazy(normalize(t, th))


def is_void_super_lazy(t: Term, st: State, sig: Signature) -> bool:
    """True when t's variables touch neither any strand's past messages nor
    any other positive or delayed fact: the goal could never be instantiated
    into something relevant, so it is safe to drop outright."""
    tv = vars_of(t)
    if not tv:
        return True
    ct = canonical(t, sig)
    for s in st.strands:
        for m in s.past:
            if tv & vars_of(m.term):
                return False
    for fa in st.facts:
        if fa.kind in (POS, GHOST) and canonical(fa.term, sig) != ct:
            if tv & vars_of(fa.term):
                return False
    return True


def ghostify(st: State, t: Term, sig: Signature) -> tuple[State, bool]:
    """Replace inI(t) by a ghost, or drop it outright when t is void.

    Returns (new state, was_void)."""
    ct = canonical(t, sig)
    if not any(fa.kind == POS and fa.term == ct for fa in st.facts):
        raise TermError(f"ghostify: {t!r} is not a positive fact of the state")
    rest = [fa for fa in st.facts if not (fa.kind == POS and fa.term == ct)]
    if is_void_super_lazy(ct, st, sig):
        return make_state(st.strands, rest, st.exchange, sig), True
    rest.append(Fact(GHOST, ct))
    return make_state(st.strands, rest, st.exchange, sig), False


def fresh_generating_strands(st: State, t: Term) -> list[Strand]:
    """Least fixpoint of strands whose fresh values feed t (directly or
    through other included strands), reset with the bar at the far right."""
    want = {v for v in vars_of(t) if v.sort == "Fresh"}
    chosen: list[Strand] = []
    chosen_set: set[Strand] = set()
    changed = True
    while changed:
        changed = False
        for s in st.strands:
            if s in chosen_set or not s.fresh:
                continue
            if any(v in want for v in s.fresh):
                reset = Strand(s.fresh, s.msgs, len(s.msgs))
                chosen.append(reset)
                chosen_set.add(s)
                for m in s.msgs:
                    want |= {v for v in vars_of(m.term) if v.sort == "Fresh"}
                changed = True
    return chosen


@dataclass(frozen=True)
class LazyContext:
    """Rollback information for one ghosted goal."""

    origin_state: State       # pre-ghost state, inI(origin_term) intact
    origin_term: Term
    origin_tracks: tuple[tuple[Term, "LazyContext"], ...] = ()


def resuscitate(
    ctx: LazyContext,
    current: State,
    sigma_t: Subst,
    th: EquationalTheory,
    spec: ProtocolSpec,
) -> State:
    """Roll the search back to the instantiated version of the ghost's origin
    state, carrying over the strands that generate its fresh values."""
    sig = th.sig
    inst = apply_subst(sigma_t, ctx.origin_term, sig)
    if is_super_lazy(inst, current, spec, th):
        raise TermError("resuscitate: ghost term is still trivially generable")
    rolled = apply_subst_state(sigma_t, ctx.origin_state, sig)
    extra = fresh_generating_strands(current, inst)
    exchange = (Event(EV_RESUSC, normalize(inst, th)),) + rolled.exchange
    return make_state(
        tuple(rolled.strands) + tuple(extra),
        rolled.facts,
        exchange,
        sig,
    )


# ---------------------------------------------------------------------------
# grammar filtering


def grammar_discards(
    st: State, grammars: Iterable[Grammar], th: EquationalTheory
) -> bool:
    """True when some positive fact is in some grammar's language: the state
    can never reach an initial state."""
    negs = [fa.term for fa in st.facts if fa.kind == NEG]
    memo: dict = {}
    for g in grammars:
        for fa in st.facts:
            if fa.kind != POS:
                continue
            if grammar_member(fa.term, g, negs, th, memo):
                return True
    return False
