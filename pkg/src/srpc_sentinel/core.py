"""SRPC services and the unmonitored network they form.

Names are plain strings; the anonymous client is the reserved string ``ANON``,
which can never be a declared name (declared names start with a letter).
"""
from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator, Mapping, Protocol, Union

ANON = "_"


class Tag(str, enum.Enum):
    Q = "Q"
    R = "R"
    CS = "CS"

    def __str__(self) -> str:
        return self.value


class SrpcViolation(Exception):
    """A process emitted an action its abstract SRPC state does not allow."""


class NotEnabled(Exception):
    """An action was applied to a state in which it is not enabled."""


# --- selective queues -------------------------------------------------------


@dataclass(frozen=True, slots=True)
class QueueMessage:
    peer: str
    tag: Tag
    payload: Any = None

    def __repr__(self) -> str:
        return f"({self.peer},{self.tag.value})"


Queue = tuple  # tuple[QueueMessage, ...], front = oldest


def queue_push(q: Queue, m: QueueMessage) -> Queue:
    return q + (m,)


def queue_find(q: Queue, peer: str, tag: Tag) -> int:
    """Index of the oldest message matching ``(peer, tag)``, or -1."""
    for i, m in enumerate(q):
        if m.peer == peer and m.tag is tag:
            return i
    return -1


def queue_take(q: Queue, peer: str, tag: Tag) -> tuple[QueueMessage, Queue] | None:
    """Remove the oldest ``(peer, tag)`` message; ``None`` when there is none."""
    i = queue_find(q, peer, tag)
    if i < 0:
        return None
    return q[i], q[:i] + q[i + 1 :]


def queue_keys(q: Queue) -> list[tuple[str, Tag]]:
    """Distinct ``(peer, tag)`` pairs in order of first occurrence."""
    seen: dict[tuple[str, Tag], None] = {}
    for m in q:
        seen.setdefault((m.peer, m.tag), None)
    return list(seen)


# --- abstract SRPC process --------------------------------------------------


@dataclass(frozen=True, slots=True)
class Ready:
    def __str__(self) -> str:
        return "Ready"


@dataclass(frozen=True, slots=True)
class Working:
    client: str

    def __str__(self) -> str:
        return f"Working({self.client})"


@dataclass(frozen=True, slots=True)
class Locked:
    client: str
    server: str

    def __post_init__(self) -> None:
        if self.server == ANON:
            raise ValueError("a process cannot be locked on the anonymous client")

    def __str__(self) -> str:
        return f"Locked({self.client},{self.server})"


AbstractState = Union[Ready, Working, Locked]
READY = Ready()


@dataclass(frozen=True, slots=True)
class Recv:
    peer: str
    tag: Tag


@dataclass(frozen=True, slots=True)
class Send:
    peer: str
    tag: Tag


@dataclass(frozen=True, slots=True)
class Tau:
    pass


ProcessAction = Union[Recv, Send, Tau]
TAU = Tau()


def abstract_step(s: AbstractState, a: ProcessAction) -> frozenset[AbstractState]:
    """Successors of ``s`` under ``a`` in the abstract SRPC LTS.

    The empty set means the action is not allowed (an SRPC violation).
    ``Working(ANON)`` under ``Tau`` has two successors: itself and ``Ready``.
    """
    if isinstance(s, Ready):
        if isinstance(a, Recv) and a.tag is Tag.Q:
            return frozenset({Working(a.peer)})
        return frozenset()
    if isinstance(s, Working):
        if isinstance(a, Tau):
            if s.client == ANON:
                return frozenset({s, READY})
            return frozenset({s})
        if isinstance(a, Send):
            if a.peer == ANON:
                return frozenset()
            if a.tag is Tag.R:
                if s.client != ANON and a.peer == s.client:
                    return frozenset({READY})
                return frozenset()
            if a.tag is Tag.CS:
                return frozenset({s})
            return frozenset({Locked(s.client, a.peer)})
        return frozenset()
    if isinstance(a, Recv) and a.tag is Tag.R and a.peer == s.server:
        return frozenset({Working(s.client)})
    return frozenset()


class Process(Protocol):
    """What a concrete process must offer to be driven by a service."""

    srpc: AbstractState

    def next_output(self) -> tuple[ProcessAction, Any] | None: ...

    def after_output(self) -> "Process": ...

    def accepts(self, peer: str, tag: Tag) -> bool: ...

    def after_receive(self, peer: str, tag: Tag, payload: Any) -> "Process": ...


# --- services ----------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class Service:
    input: Queue
    process: Any
    output: Queue

    def replace(self, **kw: Any) -> "Service":
        return Service(
            kw.get("input", self.input), kw.get("process", self.process), kw.get("output", self.output)
        )


def service_internal(s: Service) -> list[ProcessAction]:
    """Internal actions (SER-TAU-IN / SER-TAU-OUT / SER-TAU) of a service."""
    out = s.process.next_output()
    if out is not None:
        return [out[0]]
    acts = [Recv(p, t) for p, t in queue_keys(s.input) if s.process.accepts(p, t)]
    acts.sort(key=lambda r: (r.peer, r.tag.value))
    return acts


def service_sends(s: Service) -> list[tuple[str, Tag]]:
    """(peer, tag) of the message SER-OUT may send: only the front of the output.

    Sending any other queued message first would let a query overtake an
    earlier response and break the client/lock correspondence."""
    if not s.output:
        return []
    m = s.output[0]
    return [(m.peer, m.tag)]


def service_enabled(s: Service) -> list[tuple[str, object]]:
    """Labelled service transitions, SER-IN excepted (it needs a sender)."""
    acts: list[tuple[str, object]] = []
    for a in service_internal(s):
        rule = "SER-TAU-IN" if isinstance(a, Recv) else "SER-TAU-OUT" if isinstance(a, Send) else "SER-TAU"
        acts.append((rule, a))
    acts.extend(("SER-OUT", Send(p, t)) for p, t in service_sends(s))
    return acts


def _checked(process: Any, new: Any, action: ProcessAction) -> Any:
    if new.srpc not in abstract_step(process.srpc, action):
        raise SrpcViolation(f"{process.srpc} --{action}--> {new.srpc} is not an SRPC transition")
    return new


def service_internal_step(s: Service, a: ProcessAction) -> Service:
    if isinstance(a, Recv):
        taken = queue_take(s.input, a.peer, a.tag)
        if taken is None or s.process.next_output() is not None or not s.process.accepts(a.peer, a.tag):
            raise NotEnabled(f"cannot receive {a}")
        msg, rest = taken
        proc = _checked(s.process, s.process.after_receive(a.peer, a.tag, msg.payload), a)
        return Service(rest, proc, s.output)
    out = s.process.next_output()
    if out is None or out[0] != a:
        raise NotEnabled(f"process does not emit {a}")
    proc = _checked(s.process, s.process.after_output(), a)
    if isinstance(a, Send):
        return Service(s.input, proc, queue_push(s.output, QueueMessage(a.peer, a.tag, out[1])))
    return Service(s.input, proc, s.output)


def service_pop_output(s: Service, peer: str, tag: Tag) -> tuple[QueueMessage, Service]:
    if not s.output or s.output[0].peer != peer or s.output[0].tag is not tag:
        raise NotEnabled(f"({peer},{tag}) is not at the front of the output")
    return s.output[0], Service(s.input, s.process, s.output[1:])


def service_push_input(s: Service, m: QueueMessage) -> Service:
    return Service(queue_push(s.input, m), s.process, s.output)


def is_locked_on(s: Service, server: str) -> bool:
    p = s.process.srpc
    return (
        isinstance(p, Locked)
        and p.server == server
        and queue_find(s.input, server, Tag.R) < 0
        and not s.output
    )


def lock_target(s: Service) -> str | None:
    p = s.process.srpc
    if isinstance(p, Locked) and is_locked_on(s, p.server):
        return p.server
    return None


# --- networks -------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class Internal:
    name: str
    act: ProcessAction


@dataclass(frozen=True, slots=True)
class Comm:
    src: str
    dst: str
    tag: Tag


NetworkAction = Union[Internal, Comm]


def delivered(src: str, tag: Tag) -> tuple[str, Tag]:
    """How the receiver sees a message: casts arrive as anonymous queries."""
    return (ANON, Tag.Q) if tag is Tag.CS else (src, tag)


@dataclass(frozen=True)
class Network:
    services: Mapping[str, Service]
    names: tuple = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        if self.names is None:
            object.__setattr__(self, "names", tuple(sorted(self.services)))

    def __getitem__(self, name: str) -> Service:
        return self.services[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.names)

    def __len__(self) -> int:
        return len(self.names)

    def updated(self, changes: Mapping[str, Service]) -> "Network":
        services = dict(self.services)
        services.update(changes)
        return Network(services, self.names)


def component_enabled(n: Network, name: str) -> list[NetworkAction]:
    s = n[name]
    acts: list[NetworkAction] = [Internal(name, a) for a in service_internal(s)]
    acts.extend(Comm(name, p, t) for p, t in service_sends(s) if p in n.services)
    return acts


def network_enabled(n: Network) -> list[NetworkAction]:
    acts: list[NetworkAction] = []
    for name in n.names:
        acts.extend(component_enabled(n, name))
    return acts


def network_step(n: Network, a: NetworkAction) -> Network:
    if isinstance(a, Internal):
        if a.name not in n.services:
            raise NotEnabled(f"unknown service {a.name}")
        return n.updated({a.name: service_internal_step(n[a.name], a.act)})
    if a.src not in n.services or a.dst not in n.services:
        raise NotEnabled(f"unknown endpoint in {a}")
    msg, sender = service_pop_output(n[a.src], a.dst, a.tag)
    changes = {a.src: sender}
    peer, tag = delivered(a.src, a.tag)
    receiver = changes.get(a.dst, n[a.dst])
    changes[a.dst] = service_push_input(receiver, QueueMessage(peer, tag, msg.payload))
    return n.updated(changes)


def action_names(a: Any) -> tuple[str, ...]:
    """Components touched by an action."""
    if isinstance(a, Comm):
        return (a.src, a.dst)
    if hasattr(a, "src"):
        return (a.src, a.dst)
    if hasattr(a, "name"):
        return (a.name,)
    return ()


# --- canonical text form ----------------------------------------------------


def format_queue(q: Iterable[Any]) -> str:
    return "[" + " ".join(repr(m) for m in q) + "]"


def serialize_service(s: Service) -> str:
    return f"{format_queue(s.input)} | {s.process!r} | {format_queue(s.output)}"


def serialize_network(n: Network) -> str:
    return "\n".join(f"{name}: {serialize_service(n[name])}" for name in n.names)


def digest(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:16]
