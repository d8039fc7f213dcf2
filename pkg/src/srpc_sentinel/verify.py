"""Seeded property sweeps shared by the command line and the test suite."""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable

from .core import Network
from .generate import GenParams, generate
from .monitor import MonitoredNetwork, deinstrument, instrument, lift_and_apply, strip_path
from .oracle import (
    alarm_condition,
    check_complete_knowledge,
    check_sound_knowledge,
    check_wf,
    deadlocked_set,
    deadlocked_set_bruteforce,
    locked_map,
)
from .script import build_network
from .sim import FairRoundRobin, SeededRandom, flush, flush_to_alarm, progress_measure, replay, run

MAX_STEPS = 4000
SOUNDNESS_CUTOFF = 120


@dataclass
class SuiteResult:
    name: str
    runs: int = 0
    failures: list[str] = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failures

    def bump(self, key: str, by: int = 1) -> None:
        self.stats[key] = self.stats.get(key, 0) + by

    def fail(self, seed: int, msg: str) -> None:
        if len(self.failures) < 50:
            self.failures.append(f"seed {seed}: {msg}")
        self.bump("failures")

    def summary(self) -> str:
        extra = " ".join(f"{k}={v}" for k, v in sorted(self.stats.items()))
        return f"{self.name}: {'ok' if self.ok else 'FAIL'} runs={self.runs} {extra}".rstrip()


def sample_network(seed: int, lo: int = 4, hi: int = 12, density: float = 0.5) -> Network:
    n = lo + seed % (hi - lo + 1)
    return build_network(generate(GenParams(n, cycle_density=density, seed=seed)))


def transparency_completeness(runs: int, seed_base: int, max_steps: int = MAX_STEPS) -> SuiteResult:
    """Lift unmonitored runs into the instrumented network."""
    res = SuiteResult("transparency-completeness")
    for k in range(runs):
        seed = seed_base + k
        net = sample_network(seed)
        r = run(net, SeededRandom(seed), max_steps, stop_on_alarm=False)
        mn = instrument(net)
        lifted: list = []
        try:
            for a in r.trace.steps:
                steps, mn = lift_and_apply(mn, a)
                lifted.extend(steps)
        except Exception as e:
            res.fail(seed, f"lifting failed: {e}")
            continue
        res.runs += 1
        res.bump("steps", len(lifted))
        if strip_path(lifted) != r.trace.steps:
            res.fail(seed, "stripped lifted path differs from the original")
        if deinstrument(mn) != r.final:
            res.fail(seed, "deinstrumented final state differs")
    return res


def transparency_soundness(runs: int, seed_base: int, max_steps: int = MAX_STEPS, delay: int = 0) -> SuiteResult:
    """Flushed monitored runs must replay, stripped of monitor steps, on the bare network."""
    res = SuiteResult("transparency-soundness")
    for k in range(runs):
        seed = seed_base + k
        net = sample_network(seed)
        # stop at a random point so the flush has pending messages to move
        cut = random.Random(seed).randint(1, SOUNDNESS_CUTOFF)
        r = run(instrument(net, delay), SeededRandom(seed), min(cut, max_steps), stop_on_alarm=False)
        try:
            fpath, flushed = flush(r.final)
        except Exception as e:
            res.fail(seed, f"flush failed: {e}")
            continue
        res.runs += 1
        res.bump("flush_steps", len(fpath))
        try:
            final = replay(net, strip_path(r.trace.steps + fpath))
        except Exception as e:
            res.fail(seed, f"stripped path does not replay: {e}")
            continue
        if final != deinstrument(flushed):
            res.fail(seed, "replayed state differs from the deinstrumented flushed state")
    return res


def _sweep(name: str, runs: int, seed_base: int, make: Callable[[Network], object],
           check: Callable[[object], list[str]], max_steps: int = MAX_STEPS, density: float = 0.5) -> SuiteResult:
    res = SuiteResult(name)
    for k in range(runs):
        seed = seed_base + k
        start = make(sample_network(seed, density=density))
        errs: list[str] = []

        def hook(i, a, s, errs=errs):
            msgs = check(s)
            if msgs:
                errs.extend(f"step {i}: {m}" for m in msgs)
                return msgs[0]
            return None

        errs.extend(check(start))
        r = run(start, SeededRandom(seed), max_steps, hooks=[hook], stop_on_alarm=False)
        res.runs += 1
        res.bump("steps", r.steps)
        if r.reason == "aborted":
            errs.append(r.diagnostic)
        for e in errs[:3]:
            res.fail(seed, e)
    return res


def well_formedness(runs: int, seed_base: int, max_steps: int = MAX_STEPS) -> list[SuiteResult]:
    def wf(s) -> list[str]:
        return [str(v) for v in check_wf(s).violations]

    return [
        _sweep("well-formedness-unmonitored", runs, seed_base, lambda n: n, wf, max_steps),
        _sweep("well-formedness-monitored", runs, seed_base, instrument, wf, max_steps),
    ]


def knowledge(runs: int, seed_base: int, delay: int = 0, max_steps: int = MAX_STEPS) -> SuiteResult:
    def kn(s) -> list[str]:
        return [str(v) for v in check_complete_knowledge(s).violations + check_sound_knowledge(s).violations]

    name = "knowledge-eager" if delay == 0 else f"knowledge-delayed-{delay}"
    return _sweep(name, runs, seed_base, lambda n: instrument(n, delay), kn, max_steps)


def persistence(runs: int, seed_base: int, monitored: bool = True, max_steps: int = MAX_STEPS) -> SuiteResult:
    """Deadlocked sets never shrink along a run."""
    prev: list[frozenset] = [frozenset()]

    def check(s) -> list[str]:
        cur = deadlocked_set(s)
        old = prev[0]
        prev[0] = cur
        return [] if old <= cur else [f"deadlocked set shrank from {sorted(old)} to {sorted(cur)}"]

    def make(n):
        prev[0] = frozenset()
        return instrument(n) if monitored else n

    return _sweep("deadlock-persistence" + ("" if monitored else "-unmonitored"), runs, seed_base, make, check,
                  max_steps, density=0.8)


def preciseness(runs: int, seed_base: int, delay: int = 0, max_steps: int = MAX_STEPS) -> SuiteResult:
    """Alarms only for real deadlocks; every deadlock can be flushed to an alarm."""
    res = SuiteResult("preciseness" if delay == 0 else f"preciseness-delayed-{delay}")
    for k in range(runs):
        seed = seed_base + k
        net = sample_network(seed, density=0.5)
        first_dead: list = []
        false_alarms: list[str] = []

        def hook(i, a, s):
            dl = deadlocked_set(s)
            if dl and not first_dead:
                first_dead.append(s)
            bad = [n for n in s.names if s[n].mstate.alarm and n not in dl]
            if bad:
                false_alarms.append(f"step {i}: alarm at {bad} outside deadlocked set {sorted(dl)}")
                return false_alarms[-1]
            return None

        r = run(instrument(net, delay), SeededRandom(seed), max_steps, hooks=[hook], stop_on_alarm=False)
        res.runs += 1
        dead = bool(deadlocked_set(r.final))
        res.bump("deadlocking" if dead else "deadlock_free")
        if r.alarms:
            res.bump("alarmed")
        for e in false_alarms:
            res.fail(seed, e)
        if first_dead:
            if flush_to_alarm(first_dead[0]) is None:
                res.fail(seed, "deadlock at first detection cannot be flushed to an alarm")
            if flush_to_alarm(r.final) is None:
                res.fail(seed, "deadlock in the final state cannot be flushed to an alarm")
        elif dead:
            res.fail(seed, "oracle hook missed the deadlock")
    return res


def alarm_condition_flush(runs: int, seed_base: int, max_steps: int = MAX_STEPS, samples: int = 4) -> SuiteResult:
    """Wherever some monitor has the alarm condition, flushing alone reaches an alarm."""
    res = SuiteResult("alarm-condition-flush")
    for k in range(runs):
        seed = seed_base + k
        net = sample_network(seed, density=0.9)
        hits: list = []

        def hook(i, a, s):
            if len(hits) < samples and not any(s[n].mstate.alarm for n in s.names):
                lm = locked_map(s)
                if any(alarm_condition(s, n, lm) for n in s.names):
                    hits.append((i, s))
            return None

        run(instrument(net), SeededRandom(seed), max_steps, hooks=[hook], stop_on_alarm=True)
        res.runs += 1
        res.bump("states_checked", len(hits))
        for i, s in hits:
            if flush_to_alarm(s) is None:
                res.fail(seed, f"alarm condition at step {i} but flushing raises no alarm")
    return res


def eventual_reporting(runs: int, seed_base: int, max_steps: int = MAX_STEPS, budget_factor: int = 10) -> SuiteResult:
    """Random prefix until a deadlock forms, then fair scheduling must raise an
    alarm within the step budget while the progress measure never grows."""
    res = SuiteResult("eventual-reporting")
    for k in range(runs):
        seed = seed_base + k
        net = sample_network(seed, density=0.9)
        pre = run(instrument(net), SeededRandom(seed), max_steps, stop_on_alarm=False,
                  stop_when=lambda s: bool(deadlocked_set(s)))
        if pre.reason != "condition":
            res.bump("no_deadlock")
            continue
        res.runs += 1
        st: MonitoredNetwork = pre.final
        queued = sum(len(st[n].mqueue) + len(st[n].service.input) + len(st[n].service.output) for n in st.names)
        budget = budget_factor * (queued + len(st.names))
        measures = [progress_measure(st)]

        def hook(i, a, s):
            m = progress_measure(s)
            last = measures[-1]
            measures.append(m)
            if last is not None and (m is None or m > last):
                return f"progress measure grew from {last} to {m} at step {i}"
            return None

        r = run(st, FairRoundRobin(), budget, hooks=[hook], stop_on_alarm=True)
        if r.reason == "invariant-violation":
            res.fail(seed, r.diagnostic)
        elif not r.alarms:
            res.fail(seed, f"no alarm within {budget} fair steps ({r.reason})")
        else:
            res.bump("steps_to_alarm", r.steps)
            res.stats["max_steps_to_alarm"] = max(res.stats.get("max_steps_to_alarm", 0), r.steps)
            res.stats["max_budget_use_pct"] = max(res.stats.get("max_budget_use_pct", 0), 100 * r.steps // budget)
    return res


def oracle_equivalence(runs: int, seed_base: int, max_steps: int = MAX_STEPS) -> SuiteResult:
    """Cycle-reachability deadlocked sets equal the subset-enumeration oracle."""
    def check(s) -> list[str]:
        a, b = deadlocked_set(s), deadlocked_set_bruteforce(s)
        return [] if a == b else [f"{sorted(a)} != {sorted(b)}"]

    res = SuiteResult("oracle-equivalence")
    for k in range(runs):
        seed = seed_base + k
        n = 2 + seed % 5
        net = build_network(generate(GenParams(n, cycle_density=0.8, seed=seed)))
        errs = check(net)
        r = run(net, SeededRandom(seed), max_steps, hooks=[lambda i, a, s: "; ".join(check(s))], stop_on_alarm=False)
        res.runs += 1
        res.bump("states", r.steps + 1)
        if deadlocked_set(r.final):
            res.bump("deadlocked_runs")
        for e in errs + ([r.diagnostic] if r.reason == "invariant-violation" else []):
            res.fail(seed, e)
    return res


SUITES = ("transparency", "preciseness", "invariants")


def run_suite(name: str, runs: int, seed_base: int) -> list[SuiteResult]:
    if name == "transparency":
        return [transparency_completeness(runs, seed_base), transparency_soundness(runs, seed_base)]
    if name == "preciseness":
        return [preciseness(runs, seed_base), alarm_condition_flush(runs, seed_base), eventual_reporting(runs, seed_base)]
    if name == "invariants":
        return [*well_formedness(runs, seed_base), knowledge(runs, seed_base), persistence(runs, seed_base),
                oracle_equivalence(runs, seed_base)]
    raise ValueError(f"unknown suite {name!r}")
