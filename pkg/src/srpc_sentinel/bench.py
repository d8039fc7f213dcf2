"""Message-count benchmarks: an unmonitored seeded run and the monitored run
obtained by lifting it, with monitors doing their housekeeping eagerly."""
from __future__ import annotations

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

from .core import Comm, action_names
from .generate import GenParams, generate
from .monitor import (
    MonIn,
    MonInternal,
    MonitoredNetwork,
    MonOut,
    MonProbeIn,
    ProbeComm,
    Timeout,
    front_action,
    instrument,
    lift_and_apply,
    monitored_network_step,
    timeout_enabled,
)
from .oracle import deadlocked_set
from .script import build_network
from .sim import FlushPriority, SeededRandom, run

CSV_FIELDS = (
    "run_id", "n_services", "strategy", "delay", "service_msgs", "probe_msgs",
    "total_msgs", "deadlocked", "detection_step", "stop_reason",
)
DEFAULT_DELAY = 50
WINDOW = 100


@dataclass
class BenchRow:
    run_id: str
    n_services: int
    strategy: str
    delay: int
    service_msgs: int
    probe_msgs: int
    total_msgs: int
    deadlocked: bool
    detection_step: int | None
    stop_reason: str
    unmonitored_service_msgs: int = 0
    series: list = field(default_factory=list, repr=False)

    def csv_row(self) -> dict:
        d = asdict(self)
        d["deadlocked"] = int(self.deadlocked)
        d["detection_step"] = "" if self.detection_step is None else self.detection_step
        return {k: d[k] for k in CSV_FIELDS}


def message_kind(a) -> str | None:
    if isinstance(a, Comm):
        return "service"
    if isinstance(a, ProbeComm):
        return "probe"
    if isinstance(a, MonInternal) and isinstance(a.op, (MonIn, MonOut)):
        return "hop"
    return None


def window_series(path: Sequence, window: int = WINDOW) -> list[dict]:
    """Per-window message counts, split by kind."""
    out = []
    for start in range(0, len(path), window):
        chunk = [message_kind(a) for a in path[start : start + window]]
        s, p, h = chunk.count("service"), chunk.count("probe"), chunk.count("hop")
        out.append({"window": start // window, "service": s, "probe": p, "total": s + p + h})
    return out


class _Recorder:
    def __init__(self, mn: MonitoredNetwork):
        self.mn = mn
        self.path: list = []
        self.detection: int | None = None

    def apply(self, a) -> None:
        before = self.mn
        self.mn = monitored_network_step(self.mn, a)
        if (
            self.detection is None
            and isinstance(a, MonInternal)
            and isinstance(a.op, MonProbeIn)
            and self.mn[a.name].mstate.alarm
            and not before[a.name].mstate.alarm
        ):
            self.detection = len(self.path)
        self.path.append(a)

    def housekeeping(self, names: Iterable[str]) -> None:
        """Process queue fronts (never service sends) and expired timers until
        the given monitors, and those they send probes to, are idle."""
        todo = sorted(set(names) | set(self.mn.timed))
        while todo:
            name = todo.pop()
            if timeout_enabled(self.mn, name):
                self.apply(MonInternal(name, Timeout()))
            a = front_action(self.mn, name)
            while a is not None and not isinstance(a, Comm):
                self.apply(a)
                if isinstance(a, ProbeComm):
                    todo.append(a.dst)
                a = front_action(self.mn, name)


def bench_run(n: int, seed: int, strategy: str, delay: int = DEFAULT_DELAY, run_id: str = "",
              max_steps: int | None = None, series: bool = False) -> BenchRow:
    sc = generate(GenParams(n, seed=seed))
    net = build_network(sc)
    res = run(net, SeededRandom(seed), max_steps or (400 * n + 10_000), stop_on_alarm=False)
    d = 0 if strategy == "eager" else delay
    rec = _Recorder(instrument(net, d))
    for a in res.trace.steps:
        steps, rec.mn = lift_and_apply(rec.mn, a)
        if rec.detection is None:
            for k, s in enumerate(steps):
                if isinstance(s, MonInternal) and isinstance(s.op, MonProbeIn) and rec.mn[s.name].mstate.alarm:
                    rec.detection = len(rec.path) + k
                    break
        rec.path.extend(steps)
        rec.housekeeping({x for s in steps for x in action_names(s)})
    drain = run(rec.mn, FlushPriority(), 100 * n + 10_000, stop_on_alarm=False)
    for k, a in enumerate(drain.trace.steps):
        if rec.detection is None and drain.alarms and drain.alarms[0].step == k:
            rec.detection = len(rec.path)
        rec.path.append(a)
    kinds = [message_kind(a) for a in rec.path]
    service, probe, hop = kinds.count("service"), kinds.count("probe"), kinds.count("hop")
    unmon = sum(1 for a in res.trace.steps if isinstance(a, Comm))
    return BenchRow(
        run_id or f"{n}-{seed}", n, strategy, d, service, probe, service + probe + hop,
        bool(deadlocked_set(res.final)), rec.detection, res.reason, unmon,
        window_series(rec.path) if series else [],
    )


def _job(args: tuple) -> BenchRow:
    return bench_run(*args)


def bench(sizes: Sequence[int], runs: int, strategy: str, delay: int = DEFAULT_DELAY,
          seed_base: int = 0, workers: int | None = None) -> list[BenchRow]:
    jobs = [(n, seed_base + 1000 * n + k, strategy, delay, f"{n}-{k}") for n in sizes for k in range(runs)]
    workers = workers if workers is not None else min(len(jobs), os.cpu_count() or 1)
    if workers <= 1:
        return [_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_job, jobs, chunksize=1))


def write_csv(rows: Iterable[BenchRow], path: str) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=CSV_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow(r.csv_row())
