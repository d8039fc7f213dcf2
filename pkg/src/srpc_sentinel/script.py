"""Scenario scripts: the text format, a deterministic SRPC process interpreter,
and a runtime conformance checker for emitted action logs.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence, Union

from .core import (
    ANON,
    READY,
    TAU,
    AbstractState,
    Locked,
    Network,
    ProcessAction,
    Ready,
    Send,
    Service,
    Tag,
    Working,
    abstract_step,
)

NAME_RE = re.compile(r"[a-zA-Z][a-zA-Z0-9_]*\Z")
KEYWORDS = frozenset({"services", "proxy", "endpoint", "session", "query", "call", "cast", "delay"})


# --- program syntax ---------------------------------------------------------


@dataclass(frozen=True, slots=True)
class Delay:
    steps: int


@dataclass(frozen=True, slots=True)
class Call:
    target: str
    program: tuple = ()
    session: str | None = None


@dataclass(frozen=True, slots=True)
class Cast:
    target: str
    program: tuple = ()
    session: str | None = None


Instruction = Union[Delay, Call, Cast]
Program = tuple  # tuple[Instruction, ...]


@dataclass(frozen=True, slots=True)
class Query:
    """Payload of a query or cast: the session it belongs to and the callee's program."""

    session: str | None
    program: Program


@dataclass(frozen=True, slots=True)
class Endpoint:
    pass


@dataclass(frozen=True, slots=True)
class Proxy:
    target: str


Role = Union[Endpoint, Proxy]
ENDPOINT = Endpoint()


@dataclass(frozen=True, slots=True)
class Session:
    ident: str
    target: str
    program: Program


@dataclass(frozen=True)
class Scenario:
    names: tuple[str, ...]
    roles: dict = field(hash=False)
    sessions: tuple[Session, ...] = ()
    name: str = field(default="scenario", compare=False)

    def role(self, name: str) -> Role:
        return self.roles.get(name, ENDPOINT)


def render_program(p: Program) -> str:
    parts = []
    for ins in p:
        if isinstance(ins, Delay):
            parts.append(f"delay {ins.steps}")
        else:
            kw = "call" if isinstance(ins, Call) else "cast"
            parts.append(f"{kw} {ins.target} {render_program(ins.program)}")
    return "[" + ", ".join(parts) + "]"


def render_scenario(sc: Scenario) -> str:
    lines = ["services: " + " ".join(sc.names)]
    for n in sc.names:
        r = sc.roles.get(n)
        if isinstance(r, Proxy):
            lines.append(f"proxy {n} -> {r.target}")
        elif isinstance(r, Endpoint):
            lines.append(f"endpoint {n}")
    for s in sc.sessions:
        lines.append(f"session {s.ident}: query {s.target} {render_program(s.program)}")
    return "\n".join(lines) + "\n"


# --- parser -----------------------------------------------------------------


class ParseError(Exception):
    def __init__(self, msg: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {msg}")
        self.line = line
        self.col = col


_TOKEN = re.compile(r"(?P<ws>\s+)|(?P<comment>#[^\n]*)|(?P<arrow>->)|(?P<punct>[\[\],:])"
                    r"|(?P<word>[a-zA-Z][a-zA-Z0-9_]*)|(?P<int>\d+)")


@dataclass(frozen=True, slots=True)
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Tok]:
    toks: list[_Tok] = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind not in ("ws", "comment"):
            toks.append(_Tok(kind, m.group(), line, pos - line_start + 1))
        chunk = m.group()
        nl = chunk.count("\n")
        if nl:
            line += nl
            line_start = pos + chunk.rindex("\n") + 1
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self, k: int = 0) -> _Tok:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def fail(self, msg: str, tok: _Tok | None = None) -> ParseError:
        tok = tok or self.peek()
        return ParseError(msg, tok.line, tok.col)

    def expect(self, text: str) -> _Tok:
        tok = self.peek()
        if tok.text != text or tok.kind == "eof":
            raise self.fail(f"expected {text!r}, found {tok.text or 'end of input'!r}")
        self.i += 1
        return tok

    def word(self, what: str = "name") -> _Tok:
        tok = self.peek()
        if tok.kind != "word":
            raise self.fail(f"expected {what}, found {tok.text or 'end of input'!r}")
        self.i += 1
        return tok

    def decl_starts_here(self) -> bool:
        t0, t1, t2 = self.peek(), self.peek(1), self.peek(2)
        if t0.kind != "word" or t1.kind != "word":
            return False
        if t0.text == "proxy":
            return t2.kind == "arrow"
        if t0.text == "session":
            return t2.text == ":"
        if t0.text == "endpoint":
            return t2.kind == "eof" or (t2.kind == "word" and t2.text in ("proxy", "endpoint", "session"))
        return False

    def program(self, names: set[str]) -> Program:
        self.expect("[")
        out: list[Instruction] = []
        if self.peek().text == "]":
            self.i += 1
            return ()
        while True:
            tok = self.word("instruction")
            if tok.text == "delay":
                n = self.peek()
                if n.kind != "int":
                    raise self.fail("expected a step count after 'delay'")
                self.i += 1
                out.append(Delay(int(n.text)))
            elif tok.text in ("call", "cast"):
                t = self.word()
                if t.text not in names:
                    raise self.fail(f"undeclared name {t.text!r}", t)
                body = self.program(names)
                out.append(Call(t.text, body) if tok.text == "call" else Cast(t.text, body))
            else:
                raise self.fail(f"unknown instruction {tok.text!r}", tok)
            if self.peek().text == ",":
                self.i += 1
                continue
            self.expect("]")
            return tuple(out)

    def scenario(self, name: str) -> Scenario:
        head = self.expect("services")
        self.expect(":")
        names: list[str] = []
        while self.peek().kind == "word" and not self.decl_starts_here():
            tok = self.word()
            if tok.text in names:
                raise self.fail(f"duplicate service {tok.text!r}", tok)
            names.append(tok.text)
        if not names:
            raise self.fail("'services:' needs at least one name", head)
        declared = set(names)
        roles: dict[str, Role] = {}
        sessions: list[Session] = []
        while self.peek().kind != "eof":
            kw = self.word("declaration")
            if kw.text in ("proxy", "endpoint"):
                if sessions:
                    raise self.fail("declarations must precede sessions", kw)
                n = self.word()
                if n.text not in declared:
                    raise self.fail(f"undeclared name {n.text!r}", n)
                if n.text in roles:
                    raise self.fail(f"role of {n.text!r} declared twice", n)
                if kw.text == "proxy":
                    self.expect("->")
                    t = self.word()
                    if t.text not in declared:
                        raise self.fail(f"undeclared name {t.text!r}", t)
                    roles[n.text] = Proxy(t.text)
                else:
                    roles[n.text] = ENDPOINT
            elif kw.text == "session":
                ident = self.word("session identifier")
                if any(s.ident == ident.text for s in sessions):
                    raise self.fail(f"duplicate session {ident.text!r}", ident)
                self.expect(":")
                self.expect("query")
                t = self.word()
                if t.text not in declared:
                    raise self.fail(f"undeclared name {t.text!r}", t)
                sessions.append(Session(ident.text, t.text, self.program(declared)))
            else:
                raise self.fail(f"unexpected {kw.text!r}", kw)
        if not sessions:
            raise self.fail("a scenario needs at least one session")
        return Scenario(tuple(names), roles, tuple(sessions), name)


def parse_scenario(text: str, name: str = "scenario") -> Scenario:
    return _Parser(text).scenario(name)


# --- interpreter ------------------------------------------------------------


def _drop_empty_delays(p: Program) -> Program:
    while p and isinstance(p[0], Delay) and p[0].steps == 0:
        p = p[1:]
    return p


@dataclass(frozen=True, slots=True)
class ScriptProcess:
    role: Role
    srpc: AbstractState = READY
    pending: Program = ()
    session: str | None = None

    def next_output(self) -> tuple[ProcessAction, object] | None:
        s = self.srpc
        if not isinstance(s, Working):
            return None
        if not self.pending:
            if s.client == ANON:
                return TAU, None
            return Send(s.client, Tag.R), self.session
        head = self.pending[0]
        if isinstance(head, Delay):
            return TAU, None
        sess = head.session if head.session is not None else self.session
        tag = Tag.Q if isinstance(head, Call) else Tag.CS
        return Send(head.target, tag), Query(sess, head.program)

    def after_output(self) -> "ScriptProcess":
        s = self.srpc
        assert isinstance(s, Working)
        if not self.pending:
            return ScriptProcess(self.role)
        head, rest = self.pending[0], self.pending[1:]
        if isinstance(head, Delay):
            return replace(self, pending=_drop_empty_delays((Delay(head.steps - 1),) + rest))
        if isinstance(head, Call):
            return replace(self, srpc=Locked(s.client, head.target), pending=_drop_empty_delays(rest))
        return replace(self, pending=_drop_empty_delays(rest))

    def accepts(self, peer: str, tag: Tag) -> bool:
        s = self.srpc
        if isinstance(s, Ready):
            return tag is Tag.Q
        if isinstance(s, Locked):
            return tag is Tag.R and peer == s.server
        return False

    def after_receive(self, peer: str, tag: Tag, payload: object) -> "ScriptProcess":
        s = self.srpc
        if isinstance(s, Locked):
            return replace(self, srpc=Working(s.client))
        q = payload if isinstance(payload, Query) else Query(None, ())
        if isinstance(self.role, Proxy):
            pending: Program = (Call(self.role.target, q.program),)
        else:
            pending = _drop_empty_delays(q.program)
        return ScriptProcess(self.role, Working(peer), pending, q.session)

    def __repr__(self) -> str:
        role = "endpoint" if isinstance(self.role, Endpoint) else f"proxy->{self.role.target}"
        return f"{self.srpc} {role} {render_program(self.pending)} {self.session or '-'}"


@dataclass(frozen=True, slots=True)
class Blocked:
    """The process waits for a message; ``peer`` None means any client."""

    peer: str | None
    tag: Tag


def script_step(p: ScriptProcess) -> tuple[ProcessAction, ScriptProcess] | Blocked:
    out = p.next_output()
    if out is not None:
        return out[0], p.after_output()
    if isinstance(p.srpc, Locked):
        return Blocked(p.srpc.server, Tag.R)
    return Blocked(None, Tag.Q)


def session_action_bound(program: Program) -> int:
    """Upper bound on the actions a session's handler emits before returning to Ready."""
    total = 1
    for ins in program:
        total += ins.steps if isinstance(ins, Delay) else 2 if isinstance(ins, Call) else 1
    return total


# --- conformance ------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class Ok:
    pass


@dataclass(frozen=True, slots=True)
class Violation:
    index: int
    reason: str = "invalid"


def conformance_check(
    log: Iterable[ProcessAction], bound: int = 10**6, start: AbstractState = READY
) -> Ok | Violation:
    """Fold the abstract SRPC machine over ``log`` (tracking both branches of
    the ``Working(ANON)`` ambiguity) and flag runs that stay busy too long."""
    states: frozenset[AbstractState] = frozenset({start})
    busy = 0
    for i, a in enumerate(log):
        nxt: set[AbstractState] = set()
        for s in states:
            nxt |= abstract_step(s, a)
        if not nxt:
            return Violation(i)
        states = frozenset(nxt)
        busy = 0 if READY in states else busy + 1
        if busy > bound:
            return Violation(i, "divergence")
    return Ok()


# --- scenario -> network ----------------------------------------------------


def initial_process(sc: Scenario, name: str) -> ScriptProcess:
    """Session targets start serving the anonymous client with a program that
    casts each session's query to themselves; everyone else starts Ready."""
    role = sc.role(name)
    own = [s for s in sc.sessions if s.target == name]
    if not own:
        return ScriptProcess(role)
    boot = tuple(Cast(name, s.program, s.ident) for s in own)
    return ScriptProcess(role, Working(ANON), boot, None)


def build_network(sc: Scenario) -> Network:
    return Network({n: Service((), initial_process(sc, n), ()) for n in sc.names})


def collect_process_logs(actions: Sequence[object]) -> dict[str, list[ProcessAction]]:
    """Per-service process action logs from a trace of network actions."""
    from .core import Internal

    logs: dict[str, list[ProcessAction]] = {}
    for a in actions:
        if isinstance(a, Internal):
            logs.setdefault(a.name, []).append(a.act)
    return logs
