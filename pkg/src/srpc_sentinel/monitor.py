"""Proxy monitors running the probe algorithm, and the network of monitored
services they form. Also converts between plain and monitored networks."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Mapping, Union

from .core import (
    ANON,
    Comm,
    Internal,
    Network,
    NotEnabled,
    QueueMessage,
    Recv,
    Service,
    Tag,
    delivered,
    format_queue,
    queue_find,
    service_internal,
    service_internal_step,
    service_sends,
    service_pop_output,
    service_push_input,
    serialize_service,
    digest,
)


@dataclass(frozen=True, slots=True)
class Probe:
    owner: str
    serial: int
    trail: tuple[str, ...] = field(default=(), compare=False)

    def __str__(self) -> str:
        return f"{self.owner}:{self.serial}"


@dataclass(frozen=True, slots=True)
class Timer:
    deadline: int
    recipients: frozenset
    probe: Probe


@dataclass(frozen=True, slots=True)
class MonitorState:
    name: str
    probe: Probe | None = None
    waiting: frozenset = frozenset()
    alarm: bool = False
    counter: int = 0
    timer: Timer | None = None

    def __repr__(self) -> str:
        w = ",".join(sorted(self.waiting))
        t = "" if self.timer is None else f" timer@{self.timer.deadline}{sorted(self.timer.recipients)}"
        return f"probe={self.probe or '-'} waiting={{{w}}} alarm={int(self.alarm)} n={self.counter}{t}"


# --- monitor queue items ----------------------------------------------------


@dataclass(frozen=True, slots=True)
class InMsg:
    peer: str
    tag: Tag
    payload: Any = field(default=None, compare=False)

    def __repr__(self) -> str:
        return f"in({self.peer},{self.tag.value})"


@dataclass(frozen=True, slots=True)
class OutMsg:
    peer: str
    tag: Tag
    payload: Any = field(default=None, compare=False)

    def __repr__(self) -> str:
        return f"out({self.peer},{self.tag.value})"


@dataclass(frozen=True, slots=True)
class InProbe:
    peer: str
    probe: Probe

    def __repr__(self) -> str:
        return f"inP({self.peer},{self.probe})"


@dataclass(frozen=True, slots=True)
class OutProbe:
    peer: str
    probe: Probe

    def __repr__(self) -> str:
        return f"outP({self.peer},{self.probe})"


QueueItem = Union[InMsg, OutMsg, InProbe, OutProbe]


# --- the algorithm ------------------------------------------------------------


def fresh_probe(m: MonitorState) -> tuple[Probe, MonitorState]:
    p = Probe(m.name, m.counter, (m.name,))
    return p, replace(m, counter=m.counter + 1)


def handle(m: MonitorState, item: QueueItem) -> tuple[MonitorState, tuple[OutProbe, ...]]:
    """One step of the detection algorithm on an observed queue item."""
    if isinstance(item, InMsg):
        if item.tag is Tag.Q:
            if item.peer == ANON:
                return m, ()
            m2 = replace(m, waiting=m.waiting | {item.peer})
            if m.probe is None:
                return m2, ()
            return m2, (OutProbe(item.peer, m.probe),)
        if item.tag is Tag.R:
            return replace(m, probe=None, timer=None), ()
        return m, ()
    if isinstance(item, OutMsg):
        if item.tag is Tag.Q:
            p, m2 = fresh_probe(m)
            return replace(m2, probe=p), ()
        if item.tag is Tag.R:
            return replace(m, waiting=m.waiting - {item.peer}), ()
        return m, ()
    if isinstance(item, InProbe):
        if m.probe is None:
            return m, ()
        if item.probe == m.probe:
            return replace(m, alarm=True), ()
        fwd = replace(item.probe, trail=item.probe.trail + (m.name,))
        return m, tuple(OutProbe(w, fwd) for w in sorted(m.waiting))
    raise TypeError(f"handle is not defined on {item!r}")


def rule_of(m: MonitorState, item: QueueItem) -> str:
    """Name of the algorithm case that ``handle(m, item)`` applies."""
    if isinstance(item, InMsg):
        if item.tag is Tag.R:
            return "ALG-R-IN"
        if item.peer == ANON:
            return "ALG-C-IN"
        return "ALG-Q-IN-NOT-LOCKED" if m.probe is None else "ALG-Q-IN-LOCKED"
    if isinstance(item, OutMsg):
        return {Tag.Q: "ALG-Q-OUT", Tag.R: "ALG-R-OUT", Tag.CS: "ALG-C-OUT"}[item.tag]
    if m.probe is None:
        return "ALG-PROBE-IN-NOT-LOCKED"
    return "ALG-PROBE-IN-ALARM" if item.probe == m.probe else "ALG-PROBE-IN-PROPAGATE"


def delayed_handle(
    m: MonitorState, item: QueueItem, delay: int, now: int
) -> tuple[MonitorState, tuple[OutProbe, ...]]:
    """Like ``handle``, but probes owed to new clients of a locked service wait
    ``delay`` steps; an incoming response cancels them."""
    if delay <= 0 or not (isinstance(item, InMsg) and item.tag is Tag.Q and item.peer != ANON and m.probe):
        return handle(m, item)
    t = m.timer
    if t is None or t.probe != m.probe:
        timer = Timer(now + delay, frozenset({item.peer}), m.probe)
    else:
        timer = Timer(min(t.deadline, now + delay), t.recipients | {item.peer}, t.probe)
    return replace(m, waiting=m.waiting | {item.peer}, timer=timer), ()


def fire_timer(m: MonitorState) -> tuple[MonitorState, tuple[OutProbe, ...]]:
    t = m.timer
    m2 = replace(m, timer=None)
    if t is None or m.probe is None or t.probe != m.probe:
        return m2, ()
    return m2, tuple(OutProbe(c, m.probe) for c in sorted(t.recipients & m.waiting))


# --- monitored services and networks ----------------------------------------


@dataclass(frozen=True, slots=True)
class MonitoredService:
    mqueue: tuple
    mstate: MonitorState
    service: Service


@dataclass(frozen=True, slots=True)
class MonIn:
    peer: str
    tag: Tag


@dataclass(frozen=True, slots=True)
class MonOut:
    peer: str
    tag: Tag


@dataclass(frozen=True, slots=True)
class MonProbeIn:
    peer: str
    probe: Probe


@dataclass(frozen=True, slots=True)
class Timeout:
    pass


@dataclass(frozen=True, slots=True)
class MonInternal:
    name: str
    op: Union[MonIn, MonOut, MonProbeIn, Timeout]


@dataclass(frozen=True, slots=True)
class ProbeComm:
    src: str
    dst: str
    probe: Probe


@dataclass(frozen=True, slots=True)
class Tick:
    pass


TICK = Tick()
MonitoredAction = Union[Internal, Comm, MonInternal, ProbeComm, Tick]


@dataclass(frozen=True)
class MonitoredNetwork:
    services: Mapping[str, MonitoredService]
    clock: int = 0
    delay: int = 0
    names: tuple = field(default=None, compare=False, repr=False)
    timed: frozenset = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        if self.names is None:
            object.__setattr__(self, "names", tuple(sorted(self.services)))
        if self.timed is None:
            object.__setattr__(self, "timed", frozenset(n for n, ms in self.services.items() if ms.mstate.timer))

    def __getitem__(self, name: str) -> MonitoredService:
        return self.services[name]

    def __iter__(self):
        return iter(self.names)

    def __len__(self) -> int:
        return len(self.names)

    def evolve(self, changes: Mapping[str, MonitoredService]) -> "MonitoredNetwork":
        services = dict(self.services)
        services.update(changes)
        timed = self.timed
        if timed or any(ms.mstate.timer for ms in changes.values()):
            timed = (timed - changes.keys()) | {n for n, ms in changes.items() if ms.mstate.timer}
        return MonitoredNetwork(services, self.clock + 1, self.delay, self.names, timed)


class NotInitial(Exception):
    pass


class CannotLift(Exception):
    pass


def front_action(mn: MonitoredNetwork, name: str) -> MonitoredAction | None:
    """The action that processes the front of ``name``'s monitor queue."""
    q = mn[name].mqueue
    if not q:
        return None
    item = q[0]
    if isinstance(item, InMsg):
        return MonInternal(name, MonIn(item.peer, item.tag))
    if isinstance(item, InProbe):
        return MonInternal(name, MonProbeIn(item.peer, item.probe))
    if isinstance(item, OutMsg):
        return Comm(name, item.peer, item.tag) if item.peer in mn.services else None
    return ProbeComm(name, item.peer, item.probe) if item.peer in mn.services else None


def timeout_enabled(mn: MonitoredNetwork, name: str) -> bool:
    t = mn[name].mstate.timer
    return t is not None and t.deadline <= mn.clock


def monitored_enabled(mn: MonitoredNetwork, name: str) -> list[MonitoredAction]:
    """Enabled actions owned by one monitored service, in a fixed rule order."""
    acts: list[MonitoredAction] = []
    fa = front_action(mn, name)
    if fa is not None:
        acts.append(fa)
    svc = mn[name].service
    acts.extend(Internal(name, a) for a in service_internal(svc))
    acts.extend(MonInternal(name, MonOut(p, t)) for p, t in service_sends(svc))
    if timeout_enabled(mn, name):
        acts.append(MonInternal(name, Timeout()))
    return acts


def tick_enabled(mn: MonitoredNetwork) -> bool:
    return any(mn[n].mstate.timer.deadline > mn.clock for n in mn.timed)


def monitored_network_enabled(mn: MonitoredNetwork) -> list[MonitoredAction]:
    acts: list[MonitoredAction] = []
    for n in mn.names:
        acts.extend(monitored_enabled(mn, n))
    if tick_enabled(mn):
        acts.append(TICK)
    return acts


def _process(mn: MonitoredNetwork, ms: MonitoredService, item: QueueItem) -> tuple[MonitorState, tuple]:
    return delayed_handle(ms.mstate, item, mn.delay, mn.clock)


def _pop_front(mn: MonitoredNetwork, name: str, expect: type, **fields: Any) -> tuple[Any, MonitoredService]:
    ms = mn[name]
    if not ms.mqueue or not isinstance(ms.mqueue[0], expect):
        raise NotEnabled(f"front of {name}'s monitor queue is not {expect.__name__}")
    item = ms.mqueue[0]
    for k, v in fields.items():
        if getattr(item, k) != v:
            raise NotEnabled(f"front of {name}'s monitor queue is {item!r}")
    return item, ms


def monitored_network_step(mn: MonitoredNetwork, a: MonitoredAction) -> MonitoredNetwork:
    if isinstance(a, Tick):
        if not tick_enabled(mn):
            raise NotEnabled("no pending timer")
        return mn.evolve({})
    if isinstance(a, Internal):
        ms = mn.services.get(a.name)
        if ms is None:
            raise NotEnabled(f"unknown service {a.name}")
        return mn.evolve({a.name: replace(ms, service=service_internal_step(ms.service, a.act))})
    if isinstance(a, MonInternal):
        if a.name not in mn.services:
            raise NotEnabled(f"unknown service {a.name}")
        op = a.op
        ms = mn[a.name]
        if isinstance(op, MonIn):
            item, ms = _pop_front(mn, a.name, InMsg, peer=op.peer, tag=op.tag)
            st, probes = _process(mn, ms, item)
            svc = service_push_input(ms.service, QueueMessage(item.peer, item.tag, item.payload))
            return mn.evolve({a.name: MonitoredService(probes + ms.mqueue[1:], st, svc)})
        if isinstance(op, MonProbeIn):
            item, ms = _pop_front(mn, a.name, InProbe, peer=op.peer, probe=op.probe)
            st, probes = _process(mn, ms, item)
            return mn.evolve({a.name: MonitoredService(probes + ms.mqueue[1:], st, ms.service)})
        if isinstance(op, MonOut):
            msg, svc = service_pop_output(ms.service, op.peer, op.tag)
            q = ms.mqueue + (OutMsg(msg.peer, msg.tag, msg.payload),)
            return mn.evolve({a.name: MonitoredService(q, ms.mstate, svc)})
        if not timeout_enabled(mn, a.name):
            raise NotEnabled(f"no expired timer at {a.name}")
        st, probes = fire_timer(ms.mstate)
        return mn.evolve({a.name: MonitoredService(probes + ms.mqueue, st, ms.service)})
    if isinstance(a, Comm):
        if a.dst not in mn.services:
            raise NotEnabled(f"unknown service {a.dst}")
        item, ms = _pop_front(mn, a.src, OutMsg, peer=a.dst, tag=a.tag)
        st, probes = _process(mn, ms, item)
        changes = {a.src: MonitoredService(probes + ms.mqueue[1:], st, ms.service)}
        peer, tag = delivered(a.src, a.tag)
        dst = changes.get(a.dst, mn[a.dst])
        changes[a.dst] = replace(dst, mqueue=dst.mqueue + (InMsg(peer, tag, item.payload),))
        return mn.evolve(changes)
    if isinstance(a, ProbeComm):
        if a.dst not in mn.services:
            raise NotEnabled(f"unknown service {a.dst}")
        item, ms = _pop_front(mn, a.src, OutProbe, peer=a.dst, probe=a.probe)
        changes = {a.src: replace(ms, mqueue=ms.mqueue[1:])}
        dst = changes.get(a.dst, mn[a.dst])
        changes[a.dst] = replace(dst, mqueue=dst.mqueue + (InProbe(a.src, item.probe),))
        return mn.evolve(changes)
    raise NotEnabled(f"unknown action {a!r}")


# --- instrumentation ------------------------------------------------------------


def instrument(n: Network, delay: int = 0) -> MonitoredNetwork:
    from .oracle import check_initial

    report = check_initial(n)
    if not report.ok:
        raise NotInitial("; ".join(v.description for v in report.violations))
    return MonitoredNetwork(
        {name: MonitoredService((), MonitorState(name), n[name]) for name in n.names}, 0, delay
    )


def deinstrument_service(ms: MonitoredService) -> Service:
    ins = tuple(QueueMessage(i.peer, i.tag, i.payload) for i in ms.mqueue if isinstance(i, InMsg))
    outs = tuple(QueueMessage(i.peer, i.tag, i.payload) for i in ms.mqueue if isinstance(i, OutMsg))
    s = ms.service
    return Service(s.input + ins, s.process, outs + s.output)


def deinstrument(mn: MonitoredNetwork) -> Network:
    return Network({name: deinstrument_service(mn[name]) for name in mn.names})


def is_flushing_action(a: MonitoredAction) -> bool:
    return isinstance(a, (MonInternal, ProbeComm, Comm))


def is_service_action(a: MonitoredAction) -> bool:
    return isinstance(a, (Internal, Comm))


def strip_path(path: Iterable[MonitoredAction]) -> list:
    return [a for a in path if is_service_action(a)]


# --- lifting --------------------------------------------------------------------


def _housekeeping_front(mn: MonitoredNetwork, name: str) -> MonitoredAction | None:
    fa = front_action(mn, name)
    if fa is None or isinstance(fa, Comm):
        return None
    return fa


def lift_action(mn: MonitoredNetwork, a: Any) -> list[MonitoredAction]:
    """Monitored actions whose combined effect on ``deinstrument(mn)`` is ``a``."""
    return lift_and_apply(mn, a)[0]


def lift_and_apply(mn: MonitoredNetwork, a: Any) -> tuple[list[MonitoredAction], MonitoredNetwork]:
    steps: list[MonitoredAction] = []

    def do(act: MonitoredAction) -> None:
        nonlocal mn
        mn = monitored_network_step(mn, act)
        steps.append(act)

    if isinstance(a, Internal):
        if isinstance(a.act, Recv):
            while queue_find(mn[a.name].service.input, a.act.peer, a.act.tag) < 0:
                fa = _housekeeping_front(mn, a.name)
                if fa is None:
                    raise CannotLift(f"{a.name} cannot reach ({a.act.peer},{a.act.tag}) in its monitor queue")
                do(fa)
        do(a)
        return steps, mn
    if isinstance(a, Comm):
        ms = mn[a.src]
        if any(isinstance(i, OutMsg) for i in ms.mqueue):
            raise CannotLift(f"{a.src}'s monitor holds an unsent message")
        do(MonInternal(a.src, MonOut(a.dst, a.tag)))
        while not isinstance(mn[a.src].mqueue[0], OutMsg):
            fa = _housekeeping_front(mn, a.src)
            assert fa is not None
            do(fa)
        do(a)
        return steps, mn
    raise CannotLift(f"cannot lift {a!r}")


# --- canonical text ---------------------------------------------------------------


def serialize_monitored(mn: MonitoredNetwork) -> str:
    lines = [f"clock={mn.clock} delay={mn.delay}"]
    for name in mn.names:
        ms = mn[name]
        lines.append(f"{name}: {format_queue(ms.mqueue)} {ms.mstate!r} || {serialize_service(ms.service)}")
    return "\n".join(lines)


def state_digest(state: Any) -> str:
    from .core import serialize_network

    if isinstance(state, MonitoredNetwork):
        return digest(serialize_monitored(state))
    return digest(serialize_network(state))
