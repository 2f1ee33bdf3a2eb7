"""Protocol model: strands, intruder knowledge, states, attack patterns, the
compiled backwards rule set, and spec validation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .matching import match_many
from .terms import (
    FRESH,
    PUBLIC,
    App,
    FreshNames,
    Signature,
    Subst,
    Term,
    TermError,
    Var,
    apply_subst,
    canonical,
    check_well_sorted,
    least_sort,
    renaming_for,
    term_key,
    vars_in_order,
    vars_of,
)
from .theory import EquationalTheory, is_irreducible, normalize
from .unification import unify_ax

SEND = 1
RECV = -1

POS = "inI"
NEG = "nI"
GHOST = "ghost"

EV_SEND = "+"
EV_RECV = "-"
EV_RESUSC = "resuscitated"


@dataclass(frozen=True)
class SignedMsg:
    sign: int  # SEND or RECV
    term: Term

    def key(self) -> tuple:
        return (self.sign, self.term.key())

    def __repr__(self) -> str:
        mark = "+" if self.sign == SEND else "-"
        return f"{mark}({self.term!r})"


@dataclass(frozen=True)
class Strand:
    """One principal's or intruder-capability's run, with the past/future bar.

    Messages before `bar` are past. fresh lists the unguessable values this
    strand generates; each must first occur in a send.
    """

    fresh: tuple[Var, ...]
    msgs: tuple[SignedMsg, ...]
    bar: int

    def __post_init__(self) -> None:
        if not (0 <= self.bar <= len(self.msgs)):
            raise TermError(f"bar {self.bar} out of bounds for strand {self}")

    def key(self) -> tuple:
        return (
            tuple(m.key() for m in self.msgs),
            self.bar,
            tuple(v.key() for v in self.fresh),
        )

    def skeleton(self) -> tuple:
        """Instantiation-invariant shape: signs, length, bar."""
        return (tuple(m.sign for m in self.msgs), self.bar)

    @property
    def past(self) -> tuple[SignedMsg, ...]:
        return self.msgs[: self.bar]

    @property
    def future(self) -> tuple[SignedMsg, ...]:
        return self.msgs[self.bar:]

    def at_start(self) -> bool:
        return self.bar == 0

    def __repr__(self) -> str:
        inner = list(map(repr, self.msgs))
        inner.insert(self.bar, "|")
        head = f":: {','.join(v.name for v in self.fresh)} :: " if self.fresh else ""
        return f"{head}[{', '.join(inner)}]"


@dataclass(frozen=True)
class Fact:
    kind: str  # POS | NEG | GHOST
    term: Term

    def key(self) -> tuple:
        order = {POS: 0, NEG: 1, GHOST: 2}
        return (order[self.kind], self.term.key())

    def __repr__(self) -> str:
        return f"{self.kind}({self.term!r})"


@dataclass(frozen=True)
class Event:
    kind: str  # EV_SEND | EV_RECV | EV_RESUSC
    term: Term

    def __repr__(self) -> str:
        if self.kind == EV_RESUSC:
            return f"resuscitated({self.term!r})"
        return f"{self.kind}({self.term!r})"


@dataclass(frozen=True)
class State:
    """Canonical protocol state: strand multiset, knowledge set, exchange list.

    Construction via make_state sorts strands and facts under the total term
    order and removes duplicate facts modulo Ax, so Ax-equal states are
    syntactically identical.
    """

    strands: tuple[Strand, ...]
    facts: tuple[Fact, ...]
    exchange: tuple[Event, ...] = ()

    def positives(self) -> list[Fact]:
        return [fa for fa in self.facts if fa.kind == POS]

    def negatives(self) -> list[Fact]:
        return [fa for fa in self.facts if fa.kind == NEG]

    def ghosts(self) -> list[Fact]:
        return [fa for fa in self.facts if fa.kind == GHOST]

    def __repr__(self) -> str:
        parts = [repr(s) for s in self.strands] + [repr(fa) for fa in self.facts]
        return " & ".join(parts) if parts else "(empty)"


def canonical_strand(s: Strand, sig: Signature) -> Strand:
    return Strand(
        s.fresh,
        tuple(SignedMsg(m.sign, canonical(m.term, sig)) for m in s.msgs),
        s.bar,
    )


def make_state(
    strands: Iterable[Strand],
    facts: Iterable[Fact],
    exchange: Iterable[Event],
    sig: Signature,
) -> State:
    ss = sorted((canonical_strand(s, sig) for s in strands), key=Strand.key)
    seen: set[tuple] = set()
    fs: list[Fact] = []
    for fa in facts:
        cf = Fact(fa.kind, canonical(fa.term, sig))
        k = (cf.kind, cf.term)
        if k not in seen:
            seen.add(k)
            fs.append(cf)
    fs.sort(key=Fact.key)
    ex = tuple(Event(e.kind, canonical(e.term, sig)) for e in exchange)
    return State(tuple(ss), tuple(fs), ex)


def state_vars(st: State) -> list[Var]:
    terms: list[Term] = []
    for s in st.strands:
        terms.extend(m.term for m in s.msgs)
        terms.extend(s.fresh)
    terms.extend(fa.term for fa in st.facts)
    terms.extend(e.term for e in st.exchange)
    return vars_in_order(terms)


def apply_subst_strand(s: Subst, strand: Strand, sig: Signature) -> Strand:
    fresh = []
    for v in strand.fresh:
        img = apply_subst(s, v, sig)
        fresh.append(img if isinstance(img, Var) else v)
    return Strand(
        tuple(fresh),
        tuple(
            SignedMsg(m.sign, apply_subst(s, m.term, sig)) for m in strand.msgs
        ),
        strand.bar,
    )


def apply_subst_state(s: Subst, st: State, sig: Signature) -> State:
    return make_state(
        (apply_subst_strand(s, sd, sig) for sd in st.strands),
        (Fact(fa.kind, apply_subst(s, fa.term, sig)) for fa in st.facts),
        (Event(e.kind, apply_subst(s, e.term, sig)) for e in st.exchange),
        sig,
    )


def normalize_state(st: State, th: EquationalTheory) -> State:
    return make_state(
        (
            Strand(
                s.fresh,
                tuple(SignedMsg(m.sign, normalize(m.term, th)) for m in s.msgs),
                s.bar,
            )
            for s in st.strands
        ),
        (Fact(fa.kind, normalize(fa.term, th)) for fa in st.facts),
        (Event(e.kind, normalize(e.term, th)) for e in st.exchange),
        th.sig,
    )


def rename_state(st: State, gen: FreshNames, sig: Signature) -> tuple[State, Subst]:
    ren = renaming_for(state_vars(st), gen)
    return apply_subst_state(ren, st, sig), ren


def is_initial(st: State) -> bool:
    """All bars at the start and no positive or ghost intruder fact."""
    return all(s.at_start() for s in st.strands) and not any(
        fa.kind in (POS, GHOST) for fa in st.facts
    )


# ---------------------------------------------------------------------------
# protocol specifications


@dataclass(frozen=True)
class AttackPattern:
    strands: tuple[Strand, ...]
    facts: tuple[Fact, ...]
    set_vars: tuple[str, ...] = ()  # rejected by validation; kept for diagnosis

    def to_state(self, sig: Signature) -> State:
        return make_state(self.strands, self.facts, (), sig)


@dataclass
class ProtocolSpec:
    name: str
    sig: Signature
    theory: EquationalTheory
    honest: list[tuple[str, Strand]]
    intruder: list[tuple[str, Strand]]
    attacks: list[AttackPattern]
    grammars: list = field(default_factory=list)

    def all_strands(self) -> list[tuple[str, Strand]]:
        return list(self.honest) + list(self.intruder)

    def public_filter_enabled(self) -> bool:
        return PUBLIC in self.sig.poset

    def is_public(self, t: Term) -> bool:
        return PUBLIC in self.sig.poset and self.sig.poset.leq(
            least_sort(t, self.sig), PUBLIC
        )


@dataclass(frozen=True)
class IntroRule:
    """Strand-introduction rule compiled from one send position of a template.

    The introduced strand is the truncated prefix [l1 | u+]: everything after
    the introducing send is dropped, and the bar sits right before it.
    """

    rule_id: str
    fresh: tuple[Var, ...]
    msgs: tuple[SignedMsg, ...]  # template prefix up to and including the send
    send_index: int

    @property
    def send_term(self) -> Term:
        return self.msgs[self.send_index].term

    def strand(self) -> Strand:
        return Strand(self.fresh, self.msgs, self.send_index)


RULE_RECV_BACK = "recv-back"
RULE_SEND_NOLEARN = "send-nolearn"
RULE_SEND_LEARN = "send-learn"
RULE_INPUT_FIRST = "input-first"


@dataclass
class RuleSet:
    generic: tuple[str, ...]
    introductions: tuple[IntroRule, ...]

    def rule_count(self) -> int:
        return len(self.generic) + len(self.introductions)


def compile_rules(spec: ProtocolSpec) -> RuleSet:
    intros: list[IntroRule] = []
    for name, strand in spec.all_strands():
        for k, msg in enumerate(strand.msgs):
            if msg.sign != SEND:
                continue
            kept = strand.msgs[: k + 1]
            kept_vars = set(vars_in_order([m.term for m in kept]))
            fresh = tuple(v for v in strand.fresh if v in kept_vars)
            intros.append(IntroRule(f"intro:{name}:{k}", fresh, kept, k))
    return RuleSet(
        generic=(RULE_RECV_BACK, RULE_SEND_NOLEARN, RULE_SEND_LEARN),
        introductions=tuple(intros),
    )


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" | "warning"
    message: str

    def __str__(self) -> str:
        return f"{self.severity}: {self.message}"


def validate_spec(spec: ProtocolSpec) -> list[Diagnostic]:
    out: list[Diagnostic] = []
    th = spec.theory
    gen = FreshNames(9_000_000)

    for name, strand in spec.all_strands():
        out.extend(_check_strand(name, strand, spec, gen))

    for idx, attack in enumerate(spec.attacks):
        where = f"attack {idx}"
        if attack.set_vars:
            out.append(Diagnostic(
                "error",
                f"{where}: set variables {', '.join(attack.set_vars)} are not "
                "allowed in attack patterns; strands and intruder facts are "
                "introduced only by rule application",
            ))
        for strand in attack.strands:
            out.extend(_check_strand(where, strand, spec, gen))
        for fa in attack.facts:
            try:
                check_well_sorted(fa.term, spec.sig)
            except TermError as e:
                out.append(Diagnostic("error", f"{where}: {e}"))

    seen_across: dict[Var, str] = {}
    for name, strand in spec.all_strands():
        for v in strand.fresh:
            if v in seen_across:
                out.append(Diagnostic(
                    "error",
                    f"strand {name}: fresh variable {v.name} already declared "
                    f"by strand {seen_across[v]}; fresh variables are unique "
                    "to their strand",
                ))
            seen_across[v] = name
    return out


def _check_strand(
    where: str, strand: Strand, spec: ProtocolSpec, gen: FreshNames
) -> list[Diagnostic]:
    out: list[Diagnostic] = []
    th = spec.theory
    for v in strand.fresh:
        if v.sort != FRESH:
            out.append(Diagnostic(
                "error", f"{where}: declared fresh variable {v.name} has sort "
                f"{v.sort}, expected {FRESH}"
            ))
    # declared fresh values must first occur in a send
    seen_first: dict[Var, int] = {}
    for i, m in enumerate(strand.msgs):
        for v in vars_of(m.term):
            seen_first.setdefault(v, i)
    for v in strand.fresh:
        first = seen_first.get(v)
        if first is None:
            out.append(Diagnostic(
                "warning", f"{where}: fresh variable {v.name} never occurs"
            ))
        elif strand.msgs[first].sign != SEND:
            out.append(Diagnostic(
                "error",
                f"{where}: fresh variable {v.name} first occurs in a receive; "
                "fresh values must first occur in a send",
            ))
    for i, m in enumerate(strand.msgs):
        try:
            check_well_sorted(m.term, spec.sig)
        except TermError as e:
            out.append(Diagnostic("error", f"{where}: message {i}: {e}"))
            continue
        if not is_irreducible(m.term, th):
            out.append(Diagnostic(
                "error",
                f"{where}: message {i} payload {m.term!r} is not "
                "irreducible under the equational rules",
            ))
            continue
        # approximation of stability under irreducible substitutions: warn on
        # non-variable positions that some rule left side could overlap after
        # instantiation (the variant-generating positions of the theory)
        for sub in _nonvar_subterms(m.term):
            for rule in th.rules:
                ren = renaming_for(vars_in_order([rule.lhs]), gen)
                lhs = apply_subst(ren, rule.lhs, spec.sig)
                hit = unify_ax(sub, lhs, th, gen=gen)
                if hit:
                    out.append(Diagnostic(
                        "warning",
                        f"{where}: message {i}: subterm {sub!r} may become "
                        f"reducible under instantiation (overlaps {lhs!r})",
                    ))
                    break
    return out


def _nonvar_subterms(t: Term):
    if isinstance(t, App):
        yield t
        for a in t.args:
            yield from _nonvar_subterms(a)


# ---------------------------------------------------------------------------
# rendering and serialization


_INFIX_PREC = {";": 10, "*": 20}


def term_str(t: Term, sig: Signature, prec: int = 0) -> str:
    if isinstance(t, Var):
        return t.name
    if not t.args:
        return t.op
    if t.op in _INFIX_PREC and len(t.args) == 2:
        p = _INFIX_PREC[t.op]
        left = term_str(t.args[0], sig, p + 1)
        right = term_str(t.args[1], sig, p)
        s = f"{left} {t.op} {right}"
        return f"({s})" if prec > p else s
    inner = ", ".join(term_str(a, sig, 0) for a in t.args)
    return f"{t.op}({inner})"


def msg_str(m: SignedMsg, sig: Signature) -> str:
    mark = "+" if m.sign == SEND else "-"
    return f"{mark}({term_str(m.term, sig)})"


def strand_str(s: Strand, sig: Signature) -> str:
    past = ", ".join(msg_str(m, sig) for m in s.past)
    future = ", ".join(msg_str(m, sig) for m in s.future)
    head = f":: {', '.join(v.name for v in s.fresh)} :: " if s.fresh else ""
    return f"{head}[ {past} | {future} ]".replace("[  |", "[ |").replace("|  ]", "| ]")


def state_to_json(st: State, sig: Signature) -> dict:
    return {
        "strands": [
            {
                "fresh": [repr(v) for v in s.fresh],
                "msgs": [
                    ["+" if m.sign == SEND else "-", term_str(m.term, sig)]
                    for m in s.msgs
                ],
                "bar": s.bar,
            }
            for s in st.strands
        ],
        "knowledge": [[fa.kind, term_str(fa.term, sig)] for fa in st.facts],
        "exchange": [[e.kind, term_str(e.term, sig)] for e in st.exchange],
    }
