"""Random scenarios of endpoints and proxies.

Every endpoint ``E<i>`` has a proxy ``P<i>`` in front of it. Ordinary traffic
only ever calls services of higher rank (``P<i>`` ranks just below ``E<i>``),
so it cannot lock in a cycle. With probability ``cycle_density`` the scenario
also contains one ring of endpoints that each call the next through its
proxy, which deadlocks under most schedules.
"""
from __future__ import annotations

import random
from dataclasses import dataclass

from .script import ENDPOINT, Call, Cast, Delay, Program, Proxy, Scenario, Session


CALL_REACH = 8


@dataclass(frozen=True)
class GenParams:
    n_services: int
    cycle_density: float = 0.35
    max_call_depth: int = 2
    seed: int = 0
    session_rate: float = 0.5
    ring_tail_rate: float = 0.2

    def __post_init__(self) -> None:
        if self.n_services < 2:
            raise ValueError("need at least two services")
        if not 0.0 <= self.cycle_density <= 1.0:
            raise ValueError("cycle_density must lie in [0, 1]")
        if self.max_call_depth < 1:
            raise ValueError("max_call_depth must be positive")


def _rank(name: str) -> int:
    i = int(name[1:])
    return 2 * i if name[0] == "E" else 2 * i - 1


def _program(rng: random.Random, at: str, pool: list[str], ring_proxies: list[str], depth: int,
             tail_p: float) -> Program:
    r0 = _rank(at)
    higher = [x for x in pool if r0 < _rank(x) <= r0 + CALL_REACH]
    out = []
    for _ in range(rng.randint(1, 3)):
        r = rng.random()
        if r < 0.25 or not (higher or ring_proxies):
            out.append(Delay(rng.randint(1, 3)))
        elif ring_proxies and r < 0.25 + tail_p:
            out.append(Call(rng.choice(ring_proxies), ()))
        elif higher:
            t = rng.choice(higher)
            body = _program(rng, _callee(t), pool, ring_proxies, depth - 1, tail_p) if depth > 1 else ()
            out.append(Cast(t, body) if r > 0.85 else Call(t, body))
    return tuple(out)


def _callee(name: str) -> str:
    """Where a program sent to ``name`` runs: proxies hand it to their endpoint."""
    return "E" + name[1:] if name[0] == "P" else name


def generate(params: GenParams) -> Scenario:
    rng = random.Random(params.seed)
    n = params.n_services
    pairs = n // 2
    endpoints = [f"E{i}" for i in range(1, pairs + 1)]
    proxies = [f"P{i}" for i in range(1, pairs + 1)]
    if n % 2:
        endpoints.append(f"E{pairs + 1}")
    names = tuple(endpoints + proxies)
    roles: dict = {e: ENDPOINT for e in endpoints}
    roles.update({p: Proxy("E" + p[1:]) for p in proxies})

    sessions: list[Session] = []
    ring: list[str] = []
    if rng.random() < params.cycle_density:
        if pairs >= 3:
            ring = sorted(rng.sample(range(1, pairs + 1), 3))
        elif pairs == 2:
            ring = [1, 2]
        else:
            ring = [1]
        for k, i in enumerate(ring):
            j = ring[(k + 1) % len(ring)]
            sessions.append(Session(f"s{len(sessions) + 1}", f"E{i}", (Call(f"P{j}", ()),)))
    ring_members = {f"E{i}" for i in ring} | {f"P{i}" for i in ring}
    ring_proxies = [f"P{i}" for i in ring] if rng.random() < params.ring_tail_rate else []

    pool = [x for x in names if x not in ring_members]
    tail_p = 0.1 * min(1.0, 16 / n)
    for e in [x for x in endpoints if x not in ring_members]:
        if rng.random() < params.session_rate:
            prog = _program(rng, e, pool, ring_proxies, params.max_call_depth, tail_p)
            sessions.append(Session(f"s{len(sessions) + 1}", e, prog))
    if not sessions:
        sessions.append(Session("s1", endpoints[0], (Delay(1),)))
    return Scenario(names, roles, tuple(sessions), f"gen-n{n}-seed{params.seed}")
