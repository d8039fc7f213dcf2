"""Columnar rendering of a run: one column per service, events top to bottom."""
from __future__ import annotations

from typing import Any, Sequence

from .core import Comm, lock_target
from .monitor import MonInternal, MonitoredNetwork, MonProbeIn, OutMsg, ProbeComm
from .script import Query
from .sim import AlarmReport, step


def _session_of(payload: Any) -> str:
    if isinstance(payload, Query):
        return payload.session or "-"
    return payload if isinstance(payload, str) else "-"


def _sent_payload(state: Any, a: Comm) -> Any:
    if isinstance(state, MonitoredNetwork):
        item = state[a.src].mqueue[0]
        return item.payload if isinstance(item, OutMsg) else None
    out = state[a.src].output
    return out[0].payload if out else None


def _lock_marks(state: Any) -> dict[str, str]:
    if isinstance(state, MonitoredNetwork):
        return {n: str(state[n].mstate.probe) for n in state.names if state[n].mstate.probe is not None}
    return {n: t for n in state.names if (t := lock_target(state[n])) is not None}


def trace_events(initial: Any, steps: Sequence[Any]) -> list[tuple[str, str]]:
    """(column, text) events, in order, produced by replaying ``steps``."""
    events: list[tuple[str, str]] = []
    state = initial
    locks = _lock_marks(state)
    for a in steps:
        if isinstance(a, Comm):
            sess = _session_of(_sent_payload(state, a))
            events.append((a.src, f"{a.dst} ! {a.tag.value}({sess})"))
        elif isinstance(a, ProbeComm):
            events.append((a.src, f"{a.dst} ! P({a.probe})"))
        elif isinstance(a, MonInternal) and isinstance(a.op, MonProbeIn):
            events.append((a.name, f"? P({a.op.probe})"))
        state = step(state, a)
        now = _lock_marks(state)
        for n in sorted(set(locks) | set(now)):
            if locks.get(n) != now.get(n):
                if n in locks:
                    events.append((n, "=> UNLOCK"))
                if n in now:
                    events.append((n, f"=> LOCK({now[n]})"))
        locks = now
    return events


def render_trace(initial: Any, steps: Sequence[Any], alarms: Sequence[AlarmReport] = (), width: int = 0) -> str:
    names = list(initial.names)
    events = trace_events(initial, steps)
    width = width or max([len(n) for n in names] + [len(t) for _, t in events] + [6]) + 2
    lines = ["".join(n.ljust(width) for n in names).rstrip()]
    lines.append("".join(("-" * (width - 2)).ljust(width) for _ in names).rstrip())
    col = {n: i for i, n in enumerate(names)}
    for who, text in events:
        lines.append((" " * (width * col[who]) + text).rstrip())
    if alarms:
        first = alarms[0]
        members = " ".join(sorted(set(first.trail)))
        lines.append(f"DEADLOCK detected by {first.monitor}: {{{members}}}")
    return "\n".join(lines) + "\n"


def deadlock_line_members(text: str) -> set[str] | None:
    for line in text.splitlines():
        if line.startswith("DEADLOCK"):
            inner = line[line.index("{") + 1 : line.rindex("}")]
            return set(inner.split())
    return None

