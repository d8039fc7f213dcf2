"""Ground truth over network states. Covers locks and deadlocks as well as the
invariants that must hold along every run. Monitored networks are judged through
``deinstrument``."""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Union

from .core import ANON, Locked, Network, Service, Tag, Working, lock_target
from .monitor import InMsg, InProbe, MonitoredNetwork, OutProbe, deinstrument


@dataclass(frozen=True, slots=True)
class InvariantViolation:
    rule: str
    names: tuple[str, ...]
    description: str

    def __str__(self) -> str:
        return f"{self.rule} [{', '.join(self.names)}]: {self.description}"


@dataclass(slots=True)
class InvariantReport:
    violations: list[InvariantViolation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, rule: str, names: Iterable[str], description: str) -> None:
        self.violations.append(InvariantViolation(rule, tuple(names), description))

    def extend(self, other: "InvariantReport") -> "InvariantReport":
        self.violations.extend(other.violations)
        return self

    def __str__(self) -> str:
        return "ok" if self.ok else "\n".join(map(str, self.violations))


AnyNetwork = Union[Network, MonitoredNetwork]


def _plain(n: AnyNetwork) -> Network:
    return deinstrument(n) if isinstance(n, MonitoredNetwork) else n


# --- locks and deadlocks ------------------------------------------------------


def locked_map(n: AnyNetwork) -> dict[str, str]:
    """Wait-for graph: each locked service maps to the name it is locked on."""
    n = _plain(n)
    out = {}
    for name in n.names:
        t = lock_target(n[name])
        if t is not None:
            out[name] = t
    return out


def lock_path(lm: dict[str, str], start: str) -> list[str]:
    """Names reached by following lock edges from ``start`` (excluded), stopping
    before the first repetition."""
    path: list[str] = []
    seen = {start}
    cur = start
    while cur in lm:
        cur = lm[cur]
        path.append(cur)
        if cur in seen:
            break
        seen.add(cur)
    return path


def transitively_locked(lm: dict[str, str], a: str, b: str, reflexive: bool = False) -> bool:
    """``a`` reaches ``b`` in one or more lock steps (zero allowed if ``reflexive``)."""
    return (reflexive and a == b) or b in lock_path(lm, a)


def deadlocked_set(n: AnyNetwork) -> frozenset[str]:
    """Names whose lock path ends on a cycle: the largest deadlocked set."""
    lm = locked_map(n)
    status: dict[str, bool] = {}
    for start in lm:
        if start in status:
            continue
        path, on_path = [], set()
        cur = start
        while cur in lm and cur not in status and cur not in on_path:
            path.append(cur)
            on_path.add(cur)
            cur = lm[cur]
        verdict = cur in on_path or status.get(cur, False)
        for p in path:
            status[p] = verdict
    return frozenset(k for k, v in status.items() if v)


def deadlocked_set_bruteforce(n: AnyNetwork) -> frozenset[str]:
    """Union of every subset in which each member is locked on a member."""
    lm = locked_map(n)
    names = sorted(lm)
    best: set[str] = set()
    for k in range(1, len(names) + 1):
        for subset in combinations(names, k):
            s = set(subset)
            if all(lm[x] in s for x in s):
                best |= s
    return frozenset(best)


def cycle_of(lm: dict[str, str], start: str) -> list[str]:
    """The lock cycle ``start`` leads to, listed from its entry point."""
    seen: dict[str, int] = {}
    order: list[str] = []
    cur = start
    while cur in lm and cur not in seen:
        seen[cur] = len(order)
        order.append(cur)
        cur = lm[cur]
    return order[seen[cur]:] if cur in seen else []


# --- initial networks and clients --------------------------------------------


def check_initial(n: Network) -> InvariantReport:
    r = InvariantReport()
    for name in n.names:
        s = n[name]
        if s.input or s.output:
            r.add("INIT-1", [name], "queues are not empty")
        p = s.process.srpc
        if isinstance(p, Locked):
            r.add("INIT-2", [name], f"process is {p}")
        if isinstance(p, Working) and p.client != ANON:
            r.add("INIT-3", [name], f"process is {p}")
    return r


def clients(s: Service) -> set[str]:
    out = {m.peer for m in s.input if m.tag is Tag.Q}
    out |= {m.peer for m in s.output if m.tag is Tag.R}
    p = s.process.srpc
    if isinstance(p, (Working, Locked)):
        out.add(p.client)
    out.discard(ANON)
    return out


def is_client_of(c: str, s: Service) -> bool:
    return c != ANON and c in clients(s)


# --- well-formedness ------------------------------------------------------------


def check_service_wf(name: str, s: Service, r: InvariantReport) -> None:
    p = s.process.srpc
    in_r = [m for m in s.input if m.tag is Tag.R]
    out_q = [i for i, m in enumerate(s.output) if m.tag is Tag.Q]
    if len(in_r) > 1:
        r.add("WF-C1", [name], "more than one response in input")
    for m in in_r:
        if not (isinstance(p, Locked) and p.server == m.peer):
            r.add("WF-C2", [name, m.peer], f"response from {m.peer} while {p}")
    for i in out_q:
        peer = s.output[i].peer
        if not (isinstance(p, Locked) and p.server == peer):
            r.add("WF-C3", [name, peer], f"query to {peer} in output while {p}")
        if i != len(s.output) - 1:
            r.add("WF-C4", [name, peer], "messages queued after an outgoing query")
    if in_r and out_q:
        r.add("WF-C5", [name], "response in input and query in output")
        r.add("WF-C6", [name], "query in output and response in input")
    if isinstance(p, Locked) and s.output and not any(
        m.tag is Tag.Q and m.peer == p.server for m in s.output
    ):
        r.add("WF-C7", [name], f"{p} with output lacking the query")
    seen_q: set[str] = set()
    for m in s.input:
        if m.tag is Tag.Q and m.peer != ANON:
            if m.peer in seen_q:
                r.add("WF-S1", [name, m.peer], f"two queries from {m.peer}")
            seen_q.add(m.peer)
    seen_r: set[str] = set()
    for m in s.output:
        if m.tag is Tag.R:
            if m.peer in seen_r:
                r.add("WF-S2", [name, m.peer], f"two responses to {m.peer}")
            seen_r.add(m.peer)
    roles: dict[str, int] = {}
    for c in seen_q:
        roles[c] = roles.get(c, 0) + 1
    for c in seen_r:
        roles[c] = roles.get(c, 0) + 1
    if isinstance(p, (Working, Locked)) and p.client != ANON:
        roles[p.client] = roles.get(p.client, 0) + 1
    for c, k in roles.items():
        if k > 1:
            r.add("WF-S3", [name, c], f"{c} is a client of {name} in {k} ways")


def check_wf(n: AnyNetwork) -> InvariantReport:
    n = _plain(n)
    r = InvariantReport()
    for name in n.names:
        check_service_wf(name, n[name], r)
    lm = locked_map(n)
    client_pairs = {(c, name) for name in n.names for c in clients(n[name])}
    lock_pairs = set(lm.items())
    for c, s in sorted(client_pairs - lock_pairs):
        r.add("WF-NET", [c, s], f"{c} is a client of {s} but not locked on it")
    for c, s in sorted(lock_pairs - client_pairs):
        r.add("WF-NET", [c, s], f"{c} is locked on {s} but not its client")
    return r


# --- monitor knowledge ------------------------------------------------------------


def _holds_probe(mn: MonitoredNetwork, name: str, probe) -> bool:
    return any(isinstance(i, (InProbe, OutProbe)) and i.probe == probe for i in mn[name].mqueue)


def alarm_condition(mn: MonitoredNetwork, n: str, lm: dict[str, str] | None = None) -> bool:
    if lm is None:
        lm = locked_map(mn)
    own = mn[n].mstate.probe
    n1_candidates = [n] + [x for x in lock_path(lm, n) if x != n]
    for n1 in n1_candidates:
        n2 = lm.get(n1)
        if n2 is None or n2 not in lm:
            continue
        behind = [x for x in lm if transitively_locked(lm, x, n2)]
        if any(mn[x].mstate.probe is None for x in [n2] + behind):
            continue
        if mn[n].mstate.alarm:
            return True
        if own is None:
            continue
        q2 = mn[n2].mqueue
        if any(isinstance(i, InProbe) and i.probe == own for i in mn[n].mqueue):
            return True
        if any(isinstance(i, OutProbe) and i.peer == n1 and i.probe == own for i in q2):
            return True
        if n1 in mn[n2].mstate.waiting and any(isinstance(i, InProbe) and i.probe == own for i in q2):
            return True
        query_at = next(
            (k for k, i in enumerate(q2) if isinstance(i, InMsg) and i.tag is Tag.Q and i.peer == n1), None
        )
        if query_at is not None and any(
            isinstance(i, InProbe) and i.probe == own for i in q2[query_at + 1 :]
        ):
            return True
        if any(isinstance(i, InMsg) and i.tag is Tag.Q and i.peer == n1 for i in mn[n].mqueue):
            return True
    return False


def check_complete_knowledge(mn: MonitoredNetwork) -> InvariantReport:
    r = InvariantReport()
    lm = locked_map(mn)
    for a, b in lm.items():
        if mn[a].mstate.probe is None:
            r.add("KC-1", [a], "locked but the monitor has no probe")
        if a not in mn[b].mstate.waiting and not any(
            isinstance(i, InMsg) and i.tag is Tag.Q and i.peer == a for i in mn[b].mqueue
        ):
            r.add("KC-2", [a, b], f"{a} locked on {b} but unknown to {b}'s monitor")
    dl = deadlocked_set(mn)
    cond: dict[str, bool] = {}
    for a in sorted(dl):
        if not transitively_locked(lm, a, a):
            continue
        targets = lock_path(lm, a)
        if not any(cond.setdefault(t, alarm_condition(mn, t, lm)) for t in targets):
            r.add("KC-3", [a], "on a lock cycle but no service it waits for has the alarm condition")
    return r


def check_sound_knowledge(mn: MonitoredNetwork) -> InvariantReport:
    r = InvariantReport()
    lm = locked_map(mn)
    active = {n: mn[n].mstate.probe for n in mn.names if mn[n].mstate.probe is not None}
    owner_of = {p: n for n, p in active.items()}
    for n in mn.names:
        ms = mn[n]
        st = ms.mstate
        if st.probe is not None and n not in lm and not any(
            isinstance(i, InMsg) and i.tag is Tag.R for i in ms.mqueue
        ):
            r.add("KS-1", [n], "monitor holds a probe but the service is not locked")
        for w in sorted(st.waiting):
            if lm.get(w) != n:
                r.add("KS-2", [w, n], f"{w} is waited on by {n} but not locked on it")
        for i in ms.mqueue:
            if isinstance(i, OutProbe) and lm.get(i.peer) != n:
                r.add("KS-3", [i.peer, n], f"probe queued for {i.peer} which is not locked on {n}")
            if isinstance(i, (InProbe, OutProbe)) and i.probe in owner_of:
                o = owner_of[i.probe]
                if not transitively_locked(lm, n, o, reflexive=True):
                    r.add("KS-4", [n, o], f"{n} holds the active probe of {o} but does not wait for it")
        if st.alarm and not transitively_locked(lm, n, n):
            r.add("KS-5", [n], "alarm raised but not on a lock cycle")
    return r


def check_knowledge(mn: MonitoredNetwork) -> InvariantReport:
    return check_complete_knowledge(mn).extend(check_sound_knowledge(mn))


def check_invariants(state: AnyNetwork, which: str = "all") -> InvariantReport:
    r = InvariantReport()
    if which in ("all", "wf"):
        r.extend(check_wf(state))
    if which in ("all", "knowledge") and isinstance(state, MonitoredNetwork):
        r.extend(check_knowledge(state))
    return r
