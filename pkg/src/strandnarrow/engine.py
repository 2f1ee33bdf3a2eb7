"""Backwards narrowing search: predecessor generation by reversed rules,
breadth-first tree maintenance with the reduction pipeline, initial-state
detection, and attack-trace reconstruction."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from .matching import match_many
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
    RULE_RECV_BACK,
    RULE_SEND_LEARN,
    RULE_SEND_NOLEARN,
    RuleSet,
    SEND,
    SignedMsg,
    State,
    Strand,
    apply_subst_state,
    compile_rules,
    is_initial,
    make_state,
    normalize_state,
    rename_state,
)
from .reductions import (
    LazyContext,
    ReductionConfig,
    filter_public,
    ghostify,
    grammar_discards,
    input_first,
    is_inconsistent,
    is_super_lazy,
    resuscitate,
    subsumption_holds,
)
from .terms import (
    App,
    FreshNames,
    Subst,
    Term,
    apply_subst,
    canonical,
    compose,
    renaming_for,
    vars_in_order,
)
from .theory import EquationalTheory, normalize
from .unification import DEFAULT_VARIANT_BOUND, unify_equational

GhostTracks = tuple[tuple[Term, LazyContext], ...]


@dataclass
class SearchNode:
    node_id: int
    state: State
    parent: int | None
    rule_id: str | None
    step_subst: Subst
    acc_subst: Subst
    depth: int
    ghost_tracks: GhostTracks = ()


@dataclass
class LevelStats:
    depth: int
    generated: int = 0
    survived: int = 0
    discarded: dict[str, int] = field(default_factory=dict)
    transforms: dict[str, int] = field(default_factory=dict)

    def discard(self, reason: str) -> None:
        self.discarded[reason] = self.discarded.get(reason, 0) + 1

    def transform(self, what: str) -> None:
        self.transforms[what] = self.transforms.get(what, 0) + 1

    def total_discarded(self) -> int:
        return sum(self.discarded.values())


@dataclass
class SearchResult:
    levels: list[LevelStats]
    initial_nodes: list[int]
    nodes: dict[int, SearchNode]
    saturated: bool
    caveats: list[str] = field(default_factory=list)

    def level_counts(self) -> list[int]:
        return [lv.survived for lv in self.levels]

    @property
    def complete(self) -> bool:
        return not self.caveats


@dataclass
class Successor:
    rule_id: str
    subst: Subst
    state: State
    tracks: GhostTracks


# ---------------------------------------------------------------------------
# one backwards step


def backwards_successors(
    node: SearchNode,
    rules: RuleSet,
    spec: ProtocolSpec,
    gen: FreshNames | None = None,
    variant_bound: int = DEFAULT_VARIANT_BOUND,
) -> tuple[list[Successor], bool]:
    """All predecessors of node.state under the reversed rule set, in
    deterministic (rule, strand/fact position, unifier) order.

    The second component flags truncated unifier enumeration anywhere in the
    expansion; callers must surface it, never drop it.
    """
    gen = gen or FreshNames(5_000_000)
    th = spec.theory
    sig = spec.sig
    st = node.state
    out: list[Successor] = []
    truncated = False

    def finish(rule_id, strands, facts, exchange, sigma: Subst) -> None:
        if sigma and _merges_declared_fresh(strands, sigma, sig):
            return  # distinct strands' unguessable values cannot coincide
        pre = make_state(strands, facts, exchange, sig)
        inst = apply_subst_state(sigma, pre, sig) if sigma else pre
        inst = normalize_state(inst, th)
        renamed, ren = rename_state(inst, gen, sig)
        tracks = _update_tracks(node.ghost_tracks, sigma, ren, th)
        out.append(Successor(rule_id, sigma, renamed, tracks))

    # reversed receive rule: bar moves left over a receive, the payload
    # becomes an intruder goal
    for i, s in enumerate(st.strands):
        if s.bar > 0 and s.msgs[s.bar - 1].sign == RECV:
            m = s.msgs[s.bar - 1]
            strands = list(st.strands)
            strands[i] = Strand(s.fresh, s.msgs, s.bar - 1)
            finish(
                RULE_RECV_BACK, strands,
                list(st.facts) + [Fact(POS, m.term)],
                (Event(EV_RECV, m.term),) + st.exchange, Subst(),
            )

    # reversed send rule, no learning
    for i, s in enumerate(st.strands):
        if s.bar > 0 and s.msgs[s.bar - 1].sign == SEND:
            m = s.msgs[s.bar - 1]
            strands = list(st.strands)
            strands[i] = Strand(s.fresh, s.msgs, s.bar - 1)
            finish(
                RULE_SEND_NOLEARN, strands, list(st.facts),
                (Event(EV_SEND, m.term),) + st.exchange, Subst(),
            )

    # reversed send rule, learning: this send is where the intruder got it
    for i, s in enumerate(st.strands):
        if s.bar > 0 and s.msgs[s.bar - 1].sign == SEND:
            m = s.msgs[s.bar - 1]
            for j, fa in enumerate(st.facts):
                if fa.kind != POS:
                    continue
                res = unify_equational(m.term, fa.term, th, variant_bound, gen)
                truncated |= not res.complete
                for sigma in res:
                    strands = list(st.strands)
                    strands[i] = Strand(s.fresh, s.msgs, s.bar - 1)
                    facts = list(st.facts)
                    facts[j] = Fact(NEG, fa.term)
                    finish(
                        RULE_SEND_LEARN, strands, facts,
                        (Event(EV_SEND, m.term),) + st.exchange, sigma,
                    )

    # strand introduction: an intruder goal is produced by a new strand,
    # truncated right after its introducing send
    for rule in rules.introductions:
        for j, fa in enumerate(st.facts):
            if fa.kind != POS:
                continue
            ren = renaming_for(
                vars_in_order([m.term for m in rule.msgs] + list(rule.fresh)),
                gen,
            )
            msgs = tuple(
                SignedMsg(m.sign, apply_subst(ren, m.term, sig))
                for m in rule.msgs
            )
            fresh = []
            for v in rule.fresh:
                img = apply_subst(ren, v, sig)
                fresh.append(img if isinstance(img, type(v)) else v)
            send = msgs[rule.send_index].term
            res = unify_equational(send, fa.term, th, variant_bound, gen)
            truncated |= not res.complete
            for sigma in res:
                strands = list(st.strands) + [
                    Strand(tuple(fresh), msgs, rule.send_index)
                ]
                facts = list(st.facts)
                facts[j] = Fact(NEG, fa.term)
                finish(
                    rule.rule_id, strands, facts,
                    (Event(EV_SEND, send),) + st.exchange, sigma,
                )
    return out, truncated


def _merges_declared_fresh(strands, sigma: Subst, sig) -> bool:
    seen = set()
    for s in strands:
        for v in s.fresh:
            img = apply_subst(sigma, v, sig)
            if img in seen:
                return True
            seen.add(img)
    return False


def _update_tracks(
    tracks: GhostTracks, sigma: Subst, ren: Subst, th: EquationalTheory
) -> GhostTracks:
    if not tracks:
        return ()
    sig = th.sig
    out = []
    for term, ctx in tracks:
        t2 = normalize(apply_subst(ren, apply_subst(sigma, term, sig), sig), th)
        out.append((canonical(t2, sig), ctx))
    return tuple(out)


# ---------------------------------------------------------------------------
# the breadth-first backwards search


class _History:
    """All generated states, with shape-key summaries that prune subsumption
    comparisons (multiset of strand skeletons plus fact root counts); a pure
    optimization, rejected pairs could never have matched anyway except
    through variable-merging corner cases, where keeping the state is the
    safe direction."""

    def __init__(self) -> None:
        self.entries: list[tuple[State, Counter, Counter, int]] = []

    @staticmethod
    def _pattern_profile(st: State) -> tuple[Counter, Counter, int]:
        skels = Counter(s.skeleton() for s in st.strands if not s.at_start())
        roots = Counter(
            fa.term.op for fa in st.facts
            if fa.kind == POS and isinstance(fa.term, App)
        )
        var_facts = sum(
            1 for fa in st.facts
            if fa.kind == POS and not isinstance(fa.term, App)
        )
        return skels, roots, var_facts

    def add(self, st: State) -> None:
        skels, roots, var_facts = self._pattern_profile(st)
        self.entries.append((st, skels, roots, var_facts))

    def candidates(self, st: State):
        skels2 = Counter(s.skeleton() for s in st.strands)
        roots2 = Counter(
            fa.term.op for fa in st.facts
            if fa.kind == POS and isinstance(fa.term, App)
        )
        pos2 = sum(1 for fa in st.facts if fa.kind == POS)
        for st1, skels1, roots1, var1 in self.entries:
            if var1 > pos2:
                continue
            if any(skels2[k] < n for k, n in skels1.items()):
                continue
            if any(roots2[k] < n for k, n in roots1.items()):
                continue
            yield st1


def search(
    spec: ProtocolSpec,
    attack_index: int = 0,
    config: ReductionConfig | None = None,
    max_depth: int = 10,
    variant_bound: int = DEFAULT_VARIANT_BOUND,
    gen: FreshNames | None = None,
    extra_grammars=None,
    root_state: State | None = None,
) -> SearchResult:
    """Breadth-first backwards reachability analysis from an attack pattern.

    Per level: generate all predecessors of the frontier, then apply enabled
    reductions in fixed order (public, input-first, inconsistency, grammars,
    super-lazy, subsumption against the full history). Initial states are
    collected and not expanded further.
    """
    if max_depth < 0:
        raise ValueError("max_depth must be >= 0")
    if root_state is None and not (0 <= attack_index < len(spec.attacks)):
        raise ValueError(f"attack index {attack_index} out of range")
    config = config or ReductionConfig.all()
    gen = gen or FreshNames()
    th = spec.theory
    sig = spec.sig
    rules = compile_rules(spec)
    grammars = list(spec.grammars)
    if extra_grammars:
        grammars.extend(extra_grammars)

    nodes: dict[int, SearchNode] = {}
    levels: list[LevelStats] = []
    initials: list[int] = []
    caveats: list[str] = []
    history = _History()
    counter = iter(range(10**9))

    def admit(succ: Successor, parent: int | None, depth: int,
              stats: LevelStats) -> SearchNode | None:
        stats.generated += 1
        st, tracks = succ.state, succ.tracks
        if config.public:
            st2 = filter_public(st, spec)
            if st2 is not st:
                stats.transform("public")
                st = st2
        if config.input_first:
            st2 = input_first(st, th)
            if st2 is not None:
                stats.transform("input_first")
                st = st2
        if config.inconsistency and is_inconsistent(st, th) is not None:
            stats.discard("inconsistent")
            history.add(st)
            return None
        if config.grammars and grammars and grammar_discards(st, grammars, th):
            stats.discard("grammar")
            history.add(st)
            return None
        if config.super_lazy:
            st, tracks, did = _super_lazy_phase(st, tracks, spec, th, stats)
            if did:
                if config.public:
                    st = filter_public(st, spec)
                if config.input_first:
                    st2 = input_first(st, th)
                    if st2 is not None:
                        st = st2
        if config.subsumption and not is_initial(st):
            for st1 in history.candidates(st):
                if subsumption_holds(st1, st, th, config.subsumption_variant):
                    stats.discard("subsumed")
                    history.add(st)
                    return None
        history.add(st)
        stats.survived += 1
        node = SearchNode(
            node_id=next(counter),
            state=st,
            parent=parent,
            rule_id=succ.rule_id,
            step_subst=succ.subst,
            acc_subst=(
                succ.subst if parent is None
                else compose(nodes[parent].acc_subst, succ.subst, sig)
            ),
            depth=depth,
            ghost_tracks=tracks,
        )
        nodes[node.node_id] = node
        if is_initial(st):
            initials.append(node.node_id)
        return node

    root = root_state if root_state is not None else (
        spec.attacks[attack_index].to_state(sig)
    )
    root = normalize_state(root, th)
    root, _ = rename_state(root, gen, sig)
    stats0 = LevelStats(depth=0)
    node0 = admit(Successor("root", Subst(), root, ()), None, 0, stats0)
    levels.append(stats0)
    frontier = [node0] if node0 and not is_initial(node0.state) else []

    saturated = not frontier
    for depth in range(1, max_depth + 1):
        if not frontier:
            break
        stats = LevelStats(depth=depth)
        new_frontier: list[SearchNode] = []
        for nd in frontier:
            succs, truncated = backwards_successors(
                nd, rules, spec, gen, variant_bound
            )
            if truncated:
                caveats.append(
                    f"unifier enumeration truncated expanding node "
                    f"{nd.node_id} (depth {depth}); results may be incomplete"
                )
            for succ in succs:
                node = admit(succ, nd.node_id, depth, stats)
                if node is not None and not is_initial(node.state):
                    new_frontier.append(node)
        levels.append(stats)
        frontier = new_frontier
        saturated = not frontier
    return SearchResult(levels, initials, nodes, saturated, caveats)


def _super_lazy_phase(
    st: State,
    tracks: GhostTracks,
    spec: ProtocolSpec,
    th: EquationalTheory,
    stats: LevelStats,
) -> tuple[State, GhostTracks, bool]:
    sig = th.sig
    did = False
    # resuscitation: a ghost instantiated into something no longer trivially
    # generable rolls the search back to its origin state
    for _ in range(4):
        track_map = dict(tracks)
        trigger = None
        for fa in st.facts:
            if fa.kind != GHOST:
                continue
            if fa.term in track_map and not is_super_lazy(fa.term, st, spec, th):
                trigger = fa.term
                break
        if trigger is None:
            break
        ctx = track_map[trigger]
        sigma_t = _ghost_binding(ctx.origin_term, trigger, th)
        if sigma_t is None:
            break
        st = resuscitate(ctx, st, sigma_t, th, spec)
        tracks = _instantiated_origin_tracks(ctx, sigma_t, th)
        stats.transform("resuscitated")
        did = True
    lazy_terms = [
        fa.term for fa in st.facts
        if fa.kind == POS and is_super_lazy(fa.term, st, spec, th)
    ]
    if lazy_terms:
        origin = st
        origin_tracks = tracks
        for t in lazy_terms:
            st2, void = ghostify(st, t, sig)
            stats.transform("void_dropped" if void else "ghosted")
            st = st2
            if not void:
                ctx = LazyContext(origin, canonical(t, sig), origin_tracks)
                tracks = tracks + ((canonical(t, sig), ctx),)
        did = True
    return st, tracks, did


def _ghost_binding(origin_term: Term, current: Term, th: EquationalTheory):
    for m in match_many([(origin_term, current)], th.sig):
        return m
    return None


def _instantiated_origin_tracks(
    ctx: LazyContext, sigma_t: Subst, th: EquationalTheory
) -> GhostTracks:
    sig = th.sig
    return tuple(
        (canonical(apply_subst(sigma_t, term, sig), sig), inner)
        for term, inner in ctx.origin_tracks
    )


# ---------------------------------------------------------------------------
# traces


def reconstruct_trace(result: SearchResult, node_id: int) -> list[Event]:
    """The found run's message exchange, resuscitation markers elided."""
    if node_id not in result.initial_nodes:
        raise ValueError(f"node {node_id} is not an initial state")
    node = result.nodes[node_id]
    return [e for e in node.state.exchange if e.kind != EV_RESUSC]


def forward_replay(initial: State, attack: State, th: EquationalTheory) -> bool:
    """Replay the initial state's exchange with the forward rules and check
    the result covers an instance of the attack pattern: the independent
    oracle validating reconstructed attacks."""
    sig = th.sig
    events = [e for e in initial.exchange if e.kind != EV_RESUSC]
    if any(fa.kind in (POS, GHOST) for fa in initial.facts):
        return False
    if any(not s.at_start() for s in initial.strands):
        return False
    strands = [(s, 0) for s in initial.strands]
    pending = [canonical(fa.term, sig) for fa in initial.facts if fa.kind == NEG]

    def step(k: int, strands, know: frozenset, pending: tuple) -> bool:
        if k == len(events):
            return _covers_attack(strands, know, attack, th)
        ev = events[k]
        t = canonical(ev.term, sig)
        want = SEND if ev.kind == EV_SEND else RECV
        if want == RECV and t not in know:
            return False
        for idx, (s, pos) in enumerate(strands):
            if pos >= len(s.msgs):
                continue
            m = s.msgs[pos]
            if m.sign != want or canonical(m.term, sig) != t:
                continue
            ns = list(strands)
            ns[idx] = (s, pos + 1)
            nk, np = know, pending
            if want == SEND and t in np:
                lst = list(np)
                lst.remove(t)
                np = tuple(lst)
                nk = know | {t}
            if step(k + 1, ns, nk, np):
                return True
        return False

    return step(0, strands, frozenset(), tuple(pending))


def _covers_attack(strands, know, attack: State, th: EquationalTheory) -> bool:
    sig = th.sig
    jobs: list[list[list[tuple[Term, Term]]]] = []
    for pat in attack.strands:
        cands = []
        for s, pos in strands:
            if pos != pat.bar or len(s.msgs) != len(pat.msgs):
                continue
            if any(a.sign != b.sign for a, b in zip(pat.msgs, s.msgs)):
                continue
            cands.append([(a.term, b.term) for a, b in zip(pat.msgs, s.msgs)])
        if not cands:
            return False
        jobs.append(cands)
    for fa in attack.facts:
        if fa.kind == POS:
            cands = [[(fa.term, t)] for t in sorted(know, key=lambda u: u.key())]
            if not cands:
                return False
            jobs.append(cands)

    def place(k: int, b: Subst) -> bool:
        if k == len(jobs):
            return True
        for pairs in jobs[k]:
            for b2 in match_many(pairs, sig, b):
                if place(k + 1, b2):
                    return True
        return False

    return place(0, Subst())
