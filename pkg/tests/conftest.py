from importlib import resources

import pytest

from srpc_sentinel.core import Comm, Internal, Recv, Tag, network_step
from srpc_sentinel.labels import parse_schedule
from srpc_sentinel.script import build_network, parse_scenario


def scenario_text(name: str) -> str:
    return resources.files("srpc_sentinel").joinpath("scenarios", name).read_text()


def load(name: str):
    return parse_scenario(scenario_text(name), name=name.rsplit(".", 1)[0])


def schedule(name: str) -> list:
    return parse_schedule(scenario_text(name))


@pytest.fixture
def envelope():
    return build_network(load("envelope.scn"))


def run_schedule(net, actions):
    for a in actions:
        net = network_step(net, a)
    return net


def envelope_states(envelope):
    """Intermediate and deadlocked configurations of the envelope."""
    sched = schedule("envelope_deadlock.sched")
    # intermediate: all three endpoints called their proxy; only E3's query arrived
    upto = sched.index(Comm("E3", "P1", Tag.Q)) + 1
    skip = {Comm("E1", "P2", Tag.Q), Comm("E2", "P3", Tag.Q)} | {
        Internal(p, Recv(c, Tag.Q)) for p, c in (("P1", "E3"), ("P2", "E1"), ("P3", "E2"))
    }
    partial = [a for a in sched[:upto] if a not in skip]
    inter = run_schedule(envelope, partial)
    dead = run_schedule(envelope, sched)
    return inter, dead


# one line per acceptance criterion, printed after the test summary
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
