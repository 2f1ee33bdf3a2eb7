"""Parser for the protocol spec DSL and the grammar sub-language.

One protocol per file, UTF-8, `//` line comments, statements closed by `.`.
Sections appear in declaration order: `protocol`, `sorts`, `subsorts`/`public`,
`ops`, `vars`, `eqs`, `strands`, `intruder`, `attack` (repeatable), `grammar`.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .grammars import Grammar, Premise, Production
from .protocol import (
    RECV,
    SEND,
    AttackPattern,
    Fact,
    POS,
    ProtocolSpec,
    SignedMsg,
    Strand,
)
from .terms import (
    AC,
    COMM,
    FREE,
    FRESH,
    PUBLIC,
    App,
    OpDecl,
    Signature,
    SortPoset,
    Term,
    Var,
)
from .theory import EquationalTheory, Rule


class ParseError(Exception):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {message}")
        self.line = line
        self.col = col


@dataclass(frozen=True)
class Tok:
    kind: str  # "ident" | "punct" | "eof"
    value: str
    line: int
    col: int


_PUNCT2 = ("::", "->", "=>")
_PUNCT1 = "()[]{},.|:<=+-;*_"

_IDENT = re.compile(r"[A-Za-z][A-Za-z0-9_']*|[0-9]+")


def tokenize(text: str) -> list[Tok]:
    toks: list[Tok] = []
    line, col, i = 1, 1, 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if text.startswith("//", i):
            while i < n and text[i] != "\n":
                i += 1
            continue
        two = text[i:i + 2]
        if two in _PUNCT2:
            toks.append(Tok("punct", two, line, col))
            i += 2
            col += 2
            continue
        m = _IDENT.match(text, i)
        if m:
            toks.append(Tok("ident", m.group(), line, col))
            col += m.end() - i
            i = m.end()
            continue
        if ch in _PUNCT1:
            toks.append(Tok("punct", ch, line, col))
            i += 1
            col += 1
            continue
        raise ParseError(f"unexpected character {ch!r}", line, col)
    toks.append(Tok("eof", "", line, col))
    return toks


_SECTIONS = {
    "sorts", "subsorts", "public", "ops", "vars", "eqs",
    "strands", "intruder", "attack", "grammars",
}

_INFIX_PREC = {";": 10, "*": 20}


class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.pos = 0
        self.name = ""
        self.sorts: list[str] = []
        self.pairs: list[tuple[str, str]] = []
        self.decls: list[OpDecl] = []
        self.sig: Signature | None = None
        self.vars: dict[str, Var] = {}
        self.rules: list[Rule] = []
        self.honest: list[tuple[str, Strand]] = []
        self.intruder: list[tuple[str, Strand]] = []
        self.attacks: list[AttackPattern] = []
        self.productions: list[Production] = []

    # -- token plumbing --

    def peek(self) -> Tok:
        return self.toks[self.pos]

    def next(self) -> Tok:
        t = self.toks[self.pos]
        self.pos += 1
        return t

    def expect(self, value: str) -> Tok:
        t = self.next()
        if t.value != value:
            raise ParseError(f"expected {value!r}, found {t.value!r}", t.line, t.col)
        return t

    def expect_ident(self) -> Tok:
        t = self.next()
        if t.kind != "ident":
            raise ParseError(f"expected identifier, found {t.value!r}", t.line, t.col)
        return t

    def at_section(self) -> bool:
        t = self.peek()
        return t.kind == "ident" and t.value in _SECTIONS

    def err(self, msg: str) -> ParseError:
        t = self.peek()
        return ParseError(msg, t.line, t.col)

    # -- driver --

    def parse_spec(self) -> ProtocolSpec:
        t = self.peek()
        if t.kind == "eof":
            raise ParseError("empty file: no signature section", t.line, t.col)
        if t.value != "protocol":
            raise ParseError("file must start with 'protocol <name>'", t.line, t.col)
        self.next()
        self.name = self.expect_ident().value
        saw_sorts = False
        while self.peek().kind != "eof":
            t = self.peek()
            if not self.at_section():
                raise ParseError(f"expected a section keyword, found {t.value!r}",
                                 t.line, t.col)
            section = self.next().value
            if section == "sorts":
                saw_sorts = True
                self.p_sorts()
            elif section == "subsorts":
                self.p_subsorts()
            elif section == "public":
                self.p_public()
            elif section == "ops":
                self.p_ops()
            elif section == "vars":
                self.p_vars()
            elif section == "eqs":
                self.p_eqs()
            elif section == "strands":
                self.p_strands(self.honest)
            elif section == "intruder":
                self.p_strands(self.intruder)
            elif section == "attack":
                self.p_attack()
            elif section == "grammars":
                self.p_grammar()
        if not saw_sorts:
            raise ParseError("no signature section ('sorts' missing)", 0, 0)
        sig = self.ensure_sig()
        theory = EquationalTheory(sig, self.rules)
        return ProtocolSpec(
            name=self.name,
            sig=sig,
            theory=theory,
            honest=self.honest,
            intruder=self.intruder,
            attacks=self.attacks,
            grammars=[Grammar(tuple(self.productions))] if self.productions else [],
        )

    def ensure_sig(self) -> Signature:
        if self.sig is None:
            from .terms import TermError
            try:
                poset = SortPoset(self.sorts, self.pairs)
                self.sig = Signature(poset, self.decls)
            except TermError as e:
                t = self.peek()
                raise ParseError(str(e), t.line, t.col) from None
        return self.sig

    # -- sections --

    def p_sorts(self) -> None:
        while not self.at_section() and self.peek().kind != "eof":
            t = self.next()
            if t.value == ".":
                continue
            if t.kind != "ident":
                raise ParseError(f"expected sort name, found {t.value!r}",
                                 t.line, t.col)
            self.sorts.append(t.value)

    def p_subsorts(self) -> None:
        # lines of the form: A B C < D .
        while not self.at_section() and self.peek().kind != "eof":
            lowers: list[str] = []
            while self.peek().value != "<":
                lowers.append(self.expect_ident().value)
            self.expect("<")
            upper = self.expect_ident().value
            self.expect(".")
            for lo in lowers:
                self.pairs.append((lo, upper))

    def p_public(self) -> None:
        if PUBLIC not in self.sorts:
            self.sorts.append(PUBLIC)
        while not self.at_section() and self.peek().kind != "eof":
            t = self.next()
            if t.value == ".":
                continue
            self.pairs.append((t.value, PUBLIC))

    def p_ops(self) -> None:
        while not self.at_section() and self.peek().kind != "eof":
            name_parts: list[str] = []
            while self.peek().value != ":":
                name_parts.append(self.next().value)
            opname = self._op_name(name_parts)
            self.expect(":")
            args: list[str] = []
            while self.peek().value != "->":
                args.append(self.expect_ident().value)
            self.expect("->")
            result = self.expect_ident().value
            axiom = FREE
            if self.peek().value == "[":
                self.next()
                attrs: list[str] = []
                while self.peek().value != "]":
                    attrs.append(self.next().value)
                self.next()
                axiom = self._axiom_of(attrs)
            self.expect(".")
            self.decls.append(OpDecl(opname, tuple(args), result, axiom))

    def _op_name(self, parts: list[str]) -> str:
        if len(parts) == 1:
            return parts[0]
        if len(parts) == 3 and parts[0] == "_" and parts[2] == "_":
            return parts[1]
        t = self.peek()
        raise ParseError(f"malformed operator name {' '.join(parts)!r}",
                         t.line, t.col)

    def _axiom_of(self, attrs: list[str]) -> str:
        known = {"assoc", "comm"}
        for a in attrs:
            if a not in known:
                t = self.peek()
                raise ParseError(
                    f"unsupported operator attribute {a!r} (identity/ACU "
                    "axioms are not supported)", t.line, t.col)
        if "assoc" in attrs and "comm" in attrs:
            return AC
        if attrs == ["comm"]:
            return COMM
        t = self.peek()
        raise ParseError("associativity without commutativity is not supported",
                         t.line, t.col)

    def p_vars(self) -> None:
        self.ensure_sig()
        while not self.at_section() and self.peek().kind != "eof":
            names: list[str] = []
            while self.peek().value != ":":
                names.append(self.expect_ident().value)
            self.expect(":")
            sort = self.expect_ident().value
            self.expect(".")
            if sort not in self.ensure_sig().poset:
                t = self.peek()
                raise ParseError(f"undeclared sort {sort!r}", t.line, t.col)
            for nm in names:
                self.vars[nm] = Var(nm, sort)

    def p_eqs(self) -> None:
        self.ensure_sig()
        while not self.at_section() and self.peek().kind != "eof":
            lhs = self.p_term({})
            self.expect("=")
            rhs = self.p_term({})
            self.expect(".")
            from .terms import TermError
            try:
                self.rules.append(Rule(lhs, rhs))
            except TermError as e:
                t = self.peek()
                raise ParseError(str(e), t.line, t.col) from None

    def p_strands(self, into: list[tuple[str, Strand]]) -> None:
        self.ensure_sig()
        while not self.at_section() and self.peek().kind != "eof":
            name = self.expect_ident().value
            fresh, local = self.p_fresh_header()
            msgs, bar = self.p_msg_list(local, allow_bar=False)
            self.expect(".")
            into.append((name, Strand(tuple(fresh), tuple(msgs), 0)))

    def p_fresh_header(self) -> tuple[list[Var], dict[str, Var]]:
        fresh: list[Var] = []
        local: dict[str, Var] = {}
        if self.peek().value == "::":
            self.next()
            while self.peek().value != "::":
                nm = self.expect_ident().value
                v = Var(nm, FRESH)
                fresh.append(v)
                local[nm] = v
                if self.peek().value == ",":
                    self.next()
            self.expect("::")
        return fresh, local

    def p_msg_list(
        self, local: dict[str, Var], allow_bar: bool
    ) -> tuple[list[SignedMsg], int]:
        self.expect("[")
        msgs: list[SignedMsg] = []
        bar = -1
        while self.peek().value != "]":
            t = self.peek()
            if t.value == "|":
                if not allow_bar:
                    raise ParseError("bar not allowed in strand templates",
                                     t.line, t.col)
                if bar >= 0:
                    raise ParseError("duplicate bar", t.line, t.col)
                self.next()
                bar = len(msgs)
                continue
            sign_tok = self.next()
            if sign_tok.value == "+":
                sign = SEND
            elif sign_tok.value == "-":
                sign = RECV
            else:
                raise ParseError(
                    f"expected +(...) or -(...) message, found {sign_tok.value!r}",
                    sign_tok.line, sign_tok.col)
            self.expect("(")
            term = self.p_term(local)
            self.expect(")")
            msgs.append(SignedMsg(sign, term))
            if self.peek().value == ",":
                self.next()
        self.expect("]")
        if allow_bar and bar < 0:
            t = self.peek()
            raise ParseError("attack strand needs an explicit bar", t.line, t.col)
        return msgs, (bar if bar >= 0 else 0)

    def p_attack(self) -> None:
        self.ensure_sig()
        strands: list[Strand] = []
        facts: list[Fact] = []
        set_vars: list[str] = []
        while not self.at_section() and self.peek().kind != "eof":
            kw = self.expect_ident()
            if kw.value == "strand":
                fresh, local = self.p_fresh_header()
                msgs, bar = self.p_msg_list(local, allow_bar=True)
                self.expect(".")
                strands.append(Strand(tuple(fresh), tuple(msgs), bar))
            elif kw.value == "knows":
                term = self.p_term({})
                self.expect(".")
                facts.append(Fact(POS, term))
            elif kw.value in ("strands-set", "knowledge-set"):
                # explicit set variables; recorded so validation can reject them
                nm = self.expect_ident().value
                self.expect(".")
                set_vars.append(nm)
            else:
                raise ParseError(
                    f"unexpected {kw.value!r} in attack section "
                    "(expected strand/knows)", kw.line, kw.col)
        self.attacks.append(
            AttackPattern(tuple(strands), tuple(facts), tuple(set_vars))
        )

    def p_grammar(self) -> None:
        self.ensure_sig()
        while not self.at_section() and self.peek().kind != "eof":
            t = self.expect_ident()
            if t.value != "grl":
                raise ParseError(f"expected 'grl', found {t.value!r}",
                                 t.line, t.col)
            premises: list[Premise] = []
            while self.peek().value != "=>":
                term = self.p_term({})
                kw = self.expect_ident()
                if kw.value == "inL":
                    premises.append(Premise("inL", term, None))
                elif kw.value == "notInI":
                    premises.append(Premise("notInI", term, None))
                elif kw.value == "notLeq":
                    pat = self.p_term({})
                    premises.append(Premise("notLeq", term, pat))
                else:
                    raise ParseError(
                        f"unknown premise keyword {kw.value!r}", kw.line, kw.col)
                if self.peek().value == ",":
                    self.next()
            self.expect("=>")
            conclusion = self.p_term({})
            tail = self.expect_ident()
            if tail.value != "inL":
                raise ParseError("grammar conclusion must end with 'inL'",
                                 tail.line, tail.col)
            self.expect(".")
            self.productions.append(Production(tuple(premises), conclusion))

    # -- terms --

    def p_term(self, local: dict[str, Var], min_prec: int = 0) -> Term:
        left = self.p_primary(local)
        while True:
            t = self.peek()
            prec = _INFIX_PREC.get(t.value)
            if t.kind != "punct" or prec is None or prec < min_prec:
                return left
            if not self.ensure_sig().has_op(t.value):
                raise ParseError(f"undeclared infix operator {t.value!r}",
                                 t.line, t.col)
            self.next()
            right = self.p_term(local, prec)  # right associative
            left = App(t.value, (left, right))

    def p_primary(self, local: dict[str, Var]) -> Term:
        t = self.next()
        if t.value == "(":
            inner = self.p_term(local)
            self.expect(")")
            return inner
        if t.kind != "ident":
            raise ParseError(f"expected a term, found {t.value!r}", t.line, t.col)
        name = t.value
        if self.peek().value == "(":
            sig = self.ensure_sig()
            if not sig.has_op(name):
                raise ParseError(f"undeclared operator {name!r}", t.line, t.col)
            self.next()
            args: list[Term] = []
            while self.peek().value != ")":
                args.append(self.p_term(local))
                if self.peek().value == ",":
                    self.next()
            self.expect(")")
            if len(args) != sig.decl(name).arity:
                raise ParseError(
                    f"operator {name!r} expects {sig.decl(name).arity} "
                    f"arguments, got {len(args)}", t.line, t.col)
            return App(name, tuple(args))
        if name in local:
            return local[name]
        if name in self.vars:
            return self.vars[name]
        sig = self.ensure_sig()
        if sig.has_op(name):
            if sig.decl(name).arity != 0:
                raise ParseError(
                    f"operator {name!r} expects {sig.decl(name).arity} "
                    "arguments, got 0", t.line, t.col)
            return App(name, ())
        raise ParseError(f"unknown identifier {name!r} (not a declared "
                         "variable or operator)", t.line, t.col)


def parse_protocol(text: str) -> ProtocolSpec:
    return _Parser(text).parse_spec()


def parse_grammar_file(text: str, spec: ProtocolSpec) -> Grammar:
    """Parse a standalone grammar file against an existing spec's signature.

    The file may carry its own `vars` section; `grammar` introduces the
    productions.
    """
    p = _Parser(text)
    p.sig = spec.sig
    p.sorts = sorted(spec.sig.poset.sorts)
    p.vars = dict(_collect_spec_vars(spec))
    while p.peek().kind != "eof":
        t = p.peek()
        if t.kind == "ident" and t.value == "vars":
            p.next()
            p.p_vars()
        elif t.kind == "ident" and t.value == "grammars":
            p.next()
            p.p_grammar()
        else:
            raise ParseError(
                f"expected 'vars' or 'grammars' section, found {t.value!r}",
                t.line, t.col)
    return Grammar(tuple(p.productions))


def _collect_spec_vars(spec: ProtocolSpec) -> dict[str, Var]:
    # spec-level variable names are not stored on the spec; reconstruct the
    # usable ones from strand templates (names are unique per sort in practice)
    out: dict[str, Var] = {}
    from .terms import vars_of
    for _, strand in spec.all_strands():
        for m in strand.msgs:
            for v in vars_of(m.term):
                out.setdefault(v.name, v)
    return out
