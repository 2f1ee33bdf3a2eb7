"""Shared fixtures: the Diffie-Hellman-style signature and theory used across
the suite, plus small helpers for building terms tersely."""

from __future__ import annotations

import pytest

from strandnarrow.terms import (
    AC,
    COMM,
    App,
    OpDecl,
    Signature,
    SortPoset,
    Subst,
    Var,
)
from strandnarrow.theory import EquationalTheory, Rule


def dh_signature() -> Signature:
    poset = SortPoset(
        sorts=[
            "Msg", "Name", "Nonce", "Secret", "Enc", "Exp", "Gen",
            "GenvExp", "Key", "Fresh", "Public",
        ],
        pairs=[
            ("Name", "Msg"), ("Nonce", "Msg"), ("Secret", "Msg"),
            ("Enc", "Msg"), ("Exp", "Msg"), ("Key", "Msg"),
            ("Gen", "GenvExp"), ("Exp", "GenvExp"), ("GenvExp", "Msg"),
            ("Exp", "Key"),
            ("Name", "Public"), ("Gen", "Public"), ("Public", "Msg"),
        ],
    )
    decls = [
        OpDecl("a", (), "Name"),
        OpDecl("b", (), "Name"),
        OpDecl("i", (), "Name"),
        OpDecl("g", (), "Gen"),
        OpDecl("n", ("Name", "Fresh"), "Nonce"),
        OpDecl("sec", ("Name", "Fresh"), "Secret"),
        OpDecl(";", ("Msg", "Msg"), "Msg"),
        OpDecl("e", ("Key", "Msg"), "Enc"),
        OpDecl("d", ("Key", "Msg"), "Enc"),
        OpDecl("exp", ("GenvExp", "Nonce"), "Exp"),
        OpDecl("*", ("Nonce", "Nonce"), "Nonce", axiom=AC),
        # only used by unification edge-case tests: a non-variable of sort Fresh
        OpDecl("fc", (), "Fresh"),
    ]
    return Signature(poset, decls)


def dh_theory(sig: Signature | None = None) -> EquationalTheory:
    sig = sig or dh_signature()
    K = Var("Kq", "Key")
    Z = Var("Zq", "Msg")
    G0 = Var("Gq", "Gen")
    N1 = Var("N1q", "Nonce")
    N2 = Var("N2q", "Nonce")
    rules = [
        Rule(App("e", (K, App("d", (K, Z)))), Z),
        Rule(App("d", (K, App("e", (K, Z)))), Z),
        Rule(
            App("exp", (App("exp", (G0, N1)), N2)),
            App("exp", (G0, App("*", (N1, N2)))),
        ),
    ]
    return EquationalTheory(sig, rules)


@pytest.fixture(scope="session")
def sig() -> Signature:
    return dh_signature()


@pytest.fixture(scope="session")
def th(sig) -> EquationalTheory:
    return dh_theory(sig)


# -- term shorthands ---------------------------------------------------------

def V(name: str, sort: str = "Msg") -> Var:
    return Var(name, sort)


def c(name: str) -> App:
    return App(name, ())


def f(op: str, *args):
    return App(op, tuple(args))


def nonce(name: str, fresh: str) -> App:
    return App("n", (c(name), Var(fresh, "Fresh")))


def secret(name: str, fresh: str) -> App:
    return App("sec", (c(name), Var(fresh, "Fresh")))
