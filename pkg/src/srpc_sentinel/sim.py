"""Seeded execution of plain and monitored networks, with flushing and the
probe progress measure built on top."""
from __future__ import annotations

import random
from bisect import bisect_right, insort
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence, Union

from .core import (
    Comm,
    Internal,
    Network,
    NotEnabled,
    SrpcViolation,
    action_names,
    component_enabled,
    network_step,
)
from .labels import format_label, parse_label
from .monitor import (
    TICK,
    CannotLift,
    InMsg,
    InProbe,
    MonInternal,
    MonitoredNetwork,
    MonProbeIn,
    OutMsg,
    OutProbe,
    front_action,
    handle,
    is_flushing_action,
    lift_action,
    monitored_enabled,
    monitored_network_step,
    state_digest,
    tick_enabled,
)
from .oracle import cycle_of, deadlocked_set, locked_map

TICK_KEY = "~tick"
State = Union[Network, MonitoredNetwork]


def step(state: State, a: Any) -> State:
    if isinstance(state, MonitoredNetwork):
        return monitored_network_step(state, a)
    if not isinstance(a, (Internal, Comm)):
        raise NotEnabled(f"{format_label(a)} is not an action of an unmonitored network")
    return network_step(state, a)


def enabled_of(state: State, name: str) -> list:
    if isinstance(state, MonitoredNetwork):
        return monitored_enabled(state, name)
    return component_enabled(state, name)


def all_enabled(state: State) -> list:
    acts = [a for n in state.names for a in enabled_of(state, n)]
    if isinstance(state, MonitoredNetwork) and tick_enabled(state):
        acts.append(TICK)
    return acts


class EnabledView:
    """Enabled actions grouped by component, refreshed only where a step
    could have changed them."""

    def __init__(self, state: State):
        self.state = state
        self.cache: dict[str, list] = {}
        self.components: list[str] = []
        for n in state.names:
            acts = enabled_of(state, n)
            if acts:
                self.cache[n] = acts
                self.components.append(n)
        self._refresh_tick()

    def _refresh_tick(self) -> None:
        st = self.state
        on = isinstance(st, MonitoredNetwork) and tick_enabled(st)
        present = bool(self.components) and self.components[-1] == TICK_KEY
        if on and not present:
            self.cache[TICK_KEY] = [TICK]
            self.components.append(TICK_KEY)
        elif present and not on:
            self.components.pop()
            del self.cache[TICK_KEY]

    def actions(self, key: str) -> list:
        return self.cache.get(key, [])

    def advance(self, new_state: State, a: Any) -> None:
        self.state = new_state
        names = set(action_names(a))
        if isinstance(new_state, MonitoredNetwork):
            for n in new_state.timed:
                if new_state[n].mstate.timer.deadline <= new_state.clock:
                    names.add(n)
        for n in names:
            acts = enabled_of(new_state, n)
            had = n in self.cache
            if acts:
                self.cache[n] = acts
                if not had:
                    insort(self.components, n)
            elif had:
                del self.cache[n]
                self.components.remove(n)
        self._refresh_tick()

    def flushing(self, key: str) -> list:
        return [a for a in self.actions(key) if is_flushing_action(a)]


# --- policies -------------------------------------------------------------------


class Policy:
    ident = "policy"
    exhausted = False

    def choose(self, view: EnabledView) -> Any | None:
        raise NotImplementedError


class SeededRandom(Policy):
    """Uniform over components with something enabled, then uniform over that
    component's actions."""

    def __init__(self, seed: int):
        self.seed = seed
        self.rng = random.Random(seed)
        self.ident = "random"

    def choose(self, view: EnabledView) -> Any | None:
        if not view.components:
            return None
        key = view.components[self.rng.randrange(len(view.components))]
        acts = view.actions(key)
        return acts[self.rng.randrange(len(acts))]


class FairRoundRobin(Policy):
    """Visits components in name order, skipping idle ones; each visit picks
    the next action of that component in rotation."""

    ident = "fair"

    def __init__(self) -> None:
        self.last: str | None = None
        self.turns: dict[str, int] = {}

    def _next_key(self, keys: Sequence[str]) -> str:
        if self.last is None:
            return keys[0]
        i = bisect_right(keys, self.last)
        return keys[i % len(keys)]

    def choose(self, view: EnabledView) -> Any | None:
        if not view.components:
            return None
        key = self._next_key(view.components)
        acts = view.actions(key)
        k = self.turns.get(key, 0)
        self.turns[key] = k + 1
        self.last = key
        return acts[k % len(acts)]


class FlushPriority(Policy):
    """Prefers flushing actions, taken round-robin over components; defers to
    ``fallback`` (or stops, if there is none) when no flushing action is enabled."""

    def __init__(self, fallback: Policy | None = None, allow_timers: bool = True):
        self.fallback = fallback
        self.allow_timers = allow_timers
        self.last: str | None = None
        self.ident = "flush" if fallback is None else f"flush+{fallback.ident}"

    def choose(self, view: EnabledView) -> Any | None:
        keys = view.components
        if keys:
            start = 0 if self.last is None else bisect_right(keys, self.last)
            for j in range(len(keys)):
                key = keys[(start + j) % len(keys)]
                acts = view.flushing(key) if key != TICK_KEY else []
                if acts:
                    self.last = key
                    return acts[0]
            if self.allow_timers and TICK_KEY in view.cache:
                return TICK
        if self.fallback is not None:
            return self.fallback.choose(view)
        return None


class Scripted(Policy):
    """Replays a fixed list of actions. On a monitored network, a service-level
    action that is not directly enabled is lifted into the monitor steps that
    realise it, so both plain schedules and monitored traces replay."""

    def __init__(self, actions: Iterable[Any], fallback: Policy | None = None, ident: str = "script"):
        self.script = list(actions)
        self.pos = 0
        self.buffer: list = []
        self.fallback = fallback
        self.ident = ident

    @property
    def exhausted(self) -> bool:
        return not self.buffer and self.pos >= len(self.script)

    def choose(self, view: EnabledView) -> Any | None:
        if not self.buffer and self.pos < len(self.script):
            a = self.script[self.pos]
            self.pos += 1
            if (
                isinstance(view.state, MonitoredNetwork)
                and isinstance(a, (Internal, Comm))
                and not any(a in view.actions(n) for n in action_names(a))
            ):
                self.buffer = lift_action(view.state, a)
            else:
                self.buffer = [a]
        if self.buffer:
            return self.buffer.pop(0)
        if self.fallback is not None:
            return self.fallback.choose(view)
        return None


def make_policy(kind: str, seed: int = 0, script: Sequence[Any] | None = None) -> Policy:
    if kind == "random":
        return SeededRandom(seed)
    if kind == "fair":
        return FairRoundRobin()
    if kind == "script":
        return Scripted(script or [])
    raise ValueError(f"unknown policy {kind!r}")


# --- runs and traces --------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class AlarmReport:
    monitor: str
    owner: str
    serial: int
    trail: tuple[str, ...]
    step: int

    def __str__(self) -> str:
        return f"alarm at {self.monitor} step={self.step} probe={self.owner}:{self.serial} trail={' '.join(self.trail)}"


@dataclass
class Trace:
    initial_digest: str
    steps: list = field(default_factory=list)
    final_digest: str = ""
    digests: list[str] | None = None
    scenario: str = "scenario"
    seed: int = 0
    policy: str = "random"
    monitored: bool = False
    delay: int = 0
    alarms: list[AlarmReport] = field(default_factory=list)


@dataclass
class RunResult:
    trace: Trace
    final: State
    reason: str
    alarms: list[AlarmReport] = field(default_factory=list)
    diagnostic: str = ""

    @property
    def steps(self) -> int:
        return len(self.trace.steps)


Hook = Callable[[int, Any, State], Union[str, None]]


def run(
    state: State,
    policy: Policy,
    max_steps: int,
    hooks: Sequence[Hook] = (),
    stop_on_alarm: bool = True,
    record_digests: bool = False,
    stop_when: Callable[[State], bool] | None = None,
) -> RunResult:
    """Drive ``state`` with ``policy``. Stop reasons: quiescent, step-limit,
    alarm, invariant-violation, aborted, script-end, condition."""
    trace = Trace(state_digest(state), policy=policy.ident, monitored=isinstance(state, MonitoredNetwork))
    if isinstance(state, MonitoredNetwork):
        trace.delay = state.delay
    if record_digests:
        trace.digests = [trace.initial_digest]
    view = EnabledView(state)
    alarms: list[AlarmReport] = []
    reason, diag = "step-limit", ""
    for i in range(max_steps):
        try:
            a = policy.choose(view)
        except (CannotLift, NotEnabled) as e:
            reason, diag = "aborted", str(e)
            break
        if a is None:
            reason = "script-end" if isinstance(policy, Scripted) and view.components else "quiescent"
            break
        try:
            new = step(state, a)
        except SrpcViolation as e:
            reason, diag = "aborted", f"step {i}: {e}"
            break
        except NotEnabled as e:
            reason, diag = "aborted", f"step {i}: {format_label(a)}: {e}"
            break
        if isinstance(a, MonInternal) and isinstance(a.op, MonProbeIn):
            if new[a.name].mstate.alarm and not state[a.name].mstate.alarm:
                p = state[a.name].mqueue[0].probe
                alarms.append(AlarmReport(a.name, p.owner, p.serial, p.trail, i))
        state = new
        trace.steps.append(a)
        if record_digests:
            trace.digests.append(state_digest(state))
        view.advance(state, a)
        msgs = [m for m in (h(i, a, state) for h in hooks) if m]
        if msgs:
            reason, diag = "invariant-violation", "\n".join(msgs)
            break
        if alarms and stop_on_alarm:
            reason = "alarm"
            break
        if stop_when is not None and stop_when(state):
            reason = "condition"
            break
    trace.final_digest = state_digest(state)
    trace.alarms = alarms
    return RunResult(trace, state, reason, alarms, diag)


def replay(state: State, steps: Iterable[Any], digests: Sequence[str] | None = None) -> State:
    """Re-apply ``steps``; raises ``NotEnabled`` on a step that is not enabled
    and ``AssertionError`` if an intermediate digest differs."""
    for i, a in enumerate(steps):
        state = step(state, a)
        if digests is not None and state_digest(state) != digests[i + 1]:
            raise AssertionError(f"digest mismatch after step {i}")
    return state


def format_trace(t: Trace) -> str:
    lines = [
        f"# scenario={t.scenario} seed={t.seed} policy={t.policy}",
        f"# monitored={int(t.monitored)} delay={t.delay} initial={t.initial_digest}",
    ]
    lines.extend(f"{i} {format_label(a)}" for i, a in enumerate(t.steps))
    lines.extend(
        f"# alarm monitor={al.monitor} probe={al.owner}:{al.serial} step={al.step} trail={','.join(al.trail)}"
        for al in t.alarms
    )
    lines.append(f"# final={t.final_digest}")
    return "\n".join(lines) + "\n"


def parse_trace(text: str) -> Trace:
    meta: dict[str, str] = {}
    steps = []
    alarms = []
    for line in text.splitlines():
        if line.startswith("# alarm "):
            f = dict(tok.partition("=")[::2] for tok in line[8:].split())
            owner, _, serial = f["probe"].partition(":")
            trail = tuple(x for x in f.get("trail", "").split(",") if x)
            alarms.append(AlarmReport(f["monitor"], owner, int(serial), trail, int(f["step"])))
            continue
        if line.startswith("#"):
            for tok in line[1:].split():
                k, _, v = tok.partition("=")
                meta[k] = v
            continue
        if not line.strip():
            continue
        idx, _, label = line.partition(" ")
        if int(idx) != len(steps):
            raise ValueError(f"trace step index {idx} out of order")
        steps.append(parse_label(label))
    return Trace(
        meta.get("initial", ""),
        steps,
        meta.get("final", ""),
        scenario=meta.get("scenario", "scenario"),
        seed=int(meta.get("seed", 0)),
        policy=meta.get("policy", "random"),
        monitored=meta.get("monitored", "0") == "1",
        delay=int(meta.get("delay", 0)),
        alarms=alarms,
    )


# --- flushing ---------------------------------------------------------------------


class BoundExceeded(Exception):
    pass


def _has_service_items(mn: MonitoredNetwork, name: str) -> bool:
    return any(isinstance(i, (InMsg, OutMsg)) for i in mn[name].mqueue)


def flush(mn: MonitoredNetwork, bound: int = 100_000) -> tuple[list, MonitoredNetwork]:
    """Run flushing actions until no monitor queue holds a service message."""
    path: list = []
    pending = sorted(n for n in mn.names if _has_service_items(mn, n))
    while pending:
        name = pending[0]
        a = front_action(mn, name)
        if a is None:
            raise BoundExceeded(f"{name} cannot make flushing progress")
        if len(path) >= bound:
            raise BoundExceeded(f"flush exceeded {bound} steps")
        mn = monitored_network_step(mn, a)
        path.append(a)
        for n in action_names(a):
            if n in pending and not _has_service_items(mn, n):
                pending.remove(n)
            elif n not in pending and _has_service_items(mn, n):
                insort(pending, n)
    return path, mn


def flush_to_alarm(mn: MonitoredNetwork, bound: int = 100_000) -> tuple[int, MonitoredNetwork] | None:
    """Steps of flushing actions (plus timer expiry) until some alarm is set,
    or ``None`` if none is raised before quiescence or the bound."""
    if any(mn[n].mstate.alarm for n in mn.names):
        return 0, mn
    res = run(mn, FlushPriority(), bound, stop_on_alarm=True)
    if res.alarms:
        return res.steps, res.final
    return None


# --- progress measure -------------------------------------------------------------


def _local_forwards(mn: MonitoredNetwork, name: str, limit: int = 10_000):
    """Probe sends ``name``'s monitor would perform processing only its own
    queue front, with the number of local steps up to and including each."""
    st = mn[name].mstate
    q = list(mn[name].mqueue)
    steps = 0
    while q and steps < limit:
        item = q.pop(0)
        steps += 1
        if isinstance(item, OutProbe):
            yield steps, item
            continue
        st, probes = handle(st, item)
        q[:0] = probes
        if isinstance(item, InProbe) and st.alarm:
            yield steps, item
            return


def progress_measure(mn: MonitoredNetwork) -> tuple[int, int] | None:
    """Smallest (probe hops left, local flushing steps to the next hop) over the
    active probes of deadlocked services; ``None`` when nothing is deadlocked
    or no such probe is in flight."""
    if any(mn[n].mstate.alarm for n in mn.names):
        return (0, 0)
    lm = locked_map(mn)
    dl = deadlocked_set(mn)
    if not dl:
        return None
    cycles: dict[str, list[str]] = {}
    for n in dl:
        if n not in cycles:
            cyc = cycle_of(lm, n)
            for m in cyc:
                cycles[m] = cyc
    active = {}
    for owner in cycles:
        p = mn[owner].mstate.probe
        if p is not None:
            active[p] = owner
    best: tuple[int, int] | None = None
    for m in cycles:
        for steps, item in _local_forwards(mn, m):
            owner = active.get(item.probe)
            if owner is None:
                continue
            if isinstance(item, InProbe):
                cand = (0, steps)
            else:
                cyc = cycles[owner]
                if item.peer not in cyc:
                    continue
                dist = (cyc.index(item.peer) - cyc.index(owner)) % len(cyc)
                cand = (1 + dist, steps)
            if best is None or cand < best:
                best = cand
    return best


def is_flush_path(path: Iterable[Any]) -> bool:
    return all(is_flushing_action(a) for a in path)


__all__ = [
    "AlarmReport", "BoundExceeded", "EnabledView", "FairRoundRobin", "FlushPriority", "Policy",
    "RunResult", "Scripted", "SeededRandom", "Trace", "all_enabled", "enabled_of", "flush",
    "flush_to_alarm", "format_trace", "is_flush_path", "make_policy", "parse_trace",
    "progress_measure", "replay", "run", "step",
]
