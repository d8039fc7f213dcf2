"""Text form of action labels, as written in trace and schedule files."""
from __future__ import annotations

from .core import TAU, Comm, Internal, Recv, Send, Tag
from .monitor import MonIn, MonInternal, MonOut, MonProbeIn, Probe, ProbeComm, TICK, Tick, Timeout


class LabelError(ValueError):
    pass


def _probe(p: Probe) -> str:
    return f"{p.owner}:{p.serial}"


def format_label(a: object) -> str:
    if isinstance(a, Internal):
        act = a.act
        if isinstance(act, Recv):
            return f"tau {a.name} recv {act.peer} {act.tag.value}"
        if isinstance(act, Send):
            return f"tau {a.name} send {act.peer} {act.tag.value}"
        return f"tau {a.name}"
    if isinstance(a, Comm):
        return f"comm {a.src} {a.dst} {a.tag.value}"
    if isinstance(a, MonInternal):
        op = a.op
        if isinstance(op, MonIn):
            return f"mon {a.name} in {op.peer} {op.tag.value}"
        if isinstance(op, MonOut):
            return f"mon {a.name} out {op.peer} {op.tag.value}"
        if isinstance(op, MonProbeIn):
            return f"mon {a.name} probe {op.peer} {_probe(op.probe)}"
        return f"mon {a.name} timeout"
    if isinstance(a, ProbeComm):
        return f"probe {a.src} {a.dst} {_probe(a.probe)}"
    if isinstance(a, Tick):
        return "tick"
    raise LabelError(f"no label for {a!r}")


def _tag(s: str) -> Tag:
    try:
        return Tag(s)
    except ValueError:
        raise LabelError(f"bad tag {s!r}") from None


def _parse_probe(s: str) -> Probe:
    owner, sep, serial = s.rpartition(":")
    if not sep or not owner or not serial.isdigit():
        raise LabelError(f"bad probe {s!r}")
    return Probe(owner, int(serial))


def parse_label(text: str) -> object:
    w = text.split()
    try:
        match w:
            case ["tau", n]:
                return Internal(n, TAU)
            case ["tau", n, "recv", p, t]:
                return Internal(n, Recv(p, _tag(t)))
            case ["tau", n, "send", p, t]:
                return Internal(n, Send(p, _tag(t)))
            case ["comm", a, b, t]:
                return Comm(a, b, _tag(t))
            case ["mon", n, "in", p, t]:
                return MonInternal(n, MonIn(p, _tag(t)))
            case ["mon", n, "out", p, t]:
                return MonInternal(n, MonOut(p, _tag(t)))
            case ["mon", n, "probe", p, pr]:
                return MonInternal(n, MonProbeIn(p, _parse_probe(pr)))
            case ["mon", n, "timeout"]:
                return MonInternal(n, Timeout())
            case ["probe", a, b, pr]:
                return ProbeComm(a, b, _parse_probe(pr))
            case ["tick"]:
                return TICK
    except LabelError as e:
        raise LabelError(f"{e} in {text!r}") from None
    raise LabelError(f"unrecognised action label {text!r}")


def parse_schedule(text: str) -> list[object]:
    """Action labels, one per line; blank lines, ``#`` comments and a leading
    step index are ignored."""
    out = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        head, _, rest = line.partition(" ")
        out.append(parse_label(rest if head.isdigit() else line))
    return out

