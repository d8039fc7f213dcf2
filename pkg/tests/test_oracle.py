import random
from dataclasses import replace

import pytest

from srpc_sentinel.core import ANON, Locked, Network, QueueMessage, Service, Tag, Working, is_locked_on
from srpc_sentinel.generate import GenParams, generate
from srpc_sentinel.monitor import InProbe, MonitorState, instrument
from srpc_sentinel.oracle import (
    alarm_condition,
    check_complete_knowledge,
    check_initial,
    check_invariants,
    check_sound_knowledge,
    check_wf,
    clients,
    cycle_of,
    deadlocked_set,
    deadlocked_set_bruteforce,
    is_client_of,
    locked_map,
    transitively_locked,
)
from srpc_sentinel.script import ENDPOINT, ScriptProcess, build_network
from srpc_sentinel.sim import FairRoundRobin, Scripted, SeededRandom, replay, run

from conftest import envelope_states, load, run_schedule, schedule

Q, R = Tag.Q, Tag.R


def svc(state, inp=(), out=()):
    return Service(tuple(inp), ScriptProcess(ENDPOINT, state), tuple(out))


def msg(p, t):
    return QueueMessage(p, t)


def random_states(count, n_lo=3, n_hi=8, density=0.7, monitored=False):
    for seed in range(count):
        net = build_network(generate(GenParams(n_lo + seed % (n_hi - n_lo + 1), cycle_density=density, seed=seed)))
        start = instrument(net) if monitored else net
        r = run(start, SeededRandom(seed), random.Random(seed).randint(0, 150), stop_on_alarm=False)
        yield r.final


# --- locks ------------------------------------------------------------------------


def test_envelope_wait_for_cycle(envelope):
    _, dead = envelope_states(envelope)
    lm = locked_map(dead)
    assert lm == {"E1": "P2", "P2": "E2", "E2": "P3", "P3": "E3", "E3": "P1", "P1": "E1"}
    assert cycle_of(lm, "E1") == ["E1", "P2", "E2", "P3", "E3", "P1"]
    assert locked_map(envelope) == {}


def test_locked_map_matches_clause_by_clause_check():
    for state in random_states(150):
        expect = {}
        for name in state.names:
            s = state[name]
            p = s.process.srpc
            if not isinstance(p, Locked):
                continue
            no_response = all(not (m.peer == p.server and m.tag is R) for m in s.input)
            if no_response and len(s.output) == 0:
                expect[name] = p.server
        assert locked_map(state) == expect
        for name, target in expect.items():
            assert is_locked_on(state[name], target)


def test_proxy_loop_deadlock():
    net = build_network(load("proxy_loop.scn"))
    dead = run_schedule(net, schedule("proxy_loop.sched"))
    assert deadlocked_set(dead) == {"server", "proxy"}


def test_chain_without_cycle_is_not_deadlocked():
    net = Network({
        "a": svc(Locked(ANON, "b")),
        "b": svc(Locked("a", "c")),
        "c": svc(Working("b")),
    })
    assert locked_map(net) == {"a": "b", "b": "c"}
    assert deadlocked_set(net) == frozenset()


def test_services_waiting_on_a_cycle_are_deadlocked():
    net = Network({
        "x": svc(Locked(ANON, "a")),
        "a": svc(Locked("x", "b")),
        "b": svc(Locked("a", "a")),
    })
    assert deadlocked_set(net) == {"x", "a", "b"}
    lm = locked_map(net)
    assert transitively_locked(lm, "x", "x") is False
    assert transitively_locked(lm, "a", "a")
    assert transitively_locked(lm, "x", "x", reflexive=True)


def test_subset_enumeration_agrees_on_small_nets():
    checked = 0
    for state in random_states(300, n_lo=2, n_hi=6, density=0.9):
        assert deadlocked_set(state) == deadlocked_set_bruteforce(state)
        checked += bool(deadlocked_set(state))
    assert checked > 50


# --- initial networks and clients ------------------------------------------------------


def test_initial_checks(envelope):
    assert check_initial(envelope).ok
    locked = envelope.updated({"P1": svc(Locked(ANON, "E1"))})
    assert [v.rule for v in check_initial(locked).violations] == ["INIT-2"]
    named = envelope.updated({"P1": svc(Working("n1"))})
    assert [v.rule for v in check_initial(named).violations] == ["INIT-3"]
    busy = envelope.updated({"P1": svc(Working(ANON), out=[msg("E1", Tag.CS)])})
    assert [v.rule for v in check_initial(busy).violations] == ["INIT-1"]


def test_clients_in_intermediate_envelope(envelope):
    inter, _ = envelope_states(envelope)
    assert is_client_of("E3", inter["P1"])
    assert not is_client_of("E1", inter["P2"])
    assert clients(svc(ScriptProcess(ENDPOINT).srpc)) == set()


def test_client_disjuncts_are_exclusive_in_well_formed_states():
    for state in random_states(200):
        assert check_wf(state).ok
        for name in state.names:
            s = state[name]
            for c in clients(s):
                ways = [
                    any(m.peer == c and m.tag is Q for m in s.input),
                    isinstance(s.process.srpc, (Working, Locked)) and s.process.srpc.client == c,
                    any(m.peer == c and m.tag is R for m in s.output),
                ]
                assert sum(ways) == 1


# --- well-formedness ------------------------------------------------------------------


def test_envelope_snapshots_are_well_formed(envelope):
    inter, dead = envelope_states(envelope)
    for state in (envelope, inter, dead):
        assert check_wf(state).ok, check_wf(state)


def test_two_responses_violate_client_clause(envelope):
    _, dead = envelope_states(envelope)
    e1 = dead["E1"]
    bad = dead.updated({"E1": e1.replace(input=(msg("P2", R), msg("P2", R)))})
    rules = {v.rule for v in check_wf(bad).violations}
    assert "WF-C1" in rules


@pytest.mark.parametrize(
    "service, rule",
    [
        (svc(Working("c"), inp=[msg("s", R)]), "WF-C2"),
        (svc(Working("c"), out=[msg("s", Q)]), "WF-C3"),
        (svc(Locked("c", "s"), out=[msg("s", Q), msg("c", R)]), "WF-C4"),
        (svc(Locked("c", "s"), out=[msg("c", R)]), "WF-C7"),
        (svc(Working("c"), inp=[msg("d", Q), msg("d", Q)]), "WF-S1"),
        (svc(Working("c"), out=[msg("d", R), msg("d", R)]), "WF-S2"),
        (svc(Working("c"), inp=[msg("c", Q)]), "WF-S3"),
    ],
)
def test_single_service_clauses(service, rule):
    net = Network({"me": service, "c": svc(Locked(ANON, "me")), "d": svc(Locked(ANON, "me")),
                   "s": svc(Working(ANON))})
    assert rule in {v.rule for v in check_wf(net).violations}


def test_client_without_lock_violates_network_clause():
    net = Network({"a": svc(Working(ANON)), "b": svc(Working("a"))})
    assert [v.rule for v in check_wf(net).violations] == ["WF-NET"]


# --- monitor knowledge ------------------------------------------------------------------


def envelope_monitored_run():
    net = build_network(load("envelope.scn"))
    pol = Scripted(schedule("envelope_deadlock.sched"), fallback=FairRoundRobin())
    return run(instrument(net), pol, 5000, record_digests=False)


def test_knowledge_holds_along_envelope_deadlock():
    net = build_network(load("envelope.scn"))
    pol = Scripted(schedule("envelope_deadlock.sched"), fallback=FairRoundRobin())
    seen = []

    def hook(i, a, s):
        seen.append(i)
        r = check_invariants(s, "all")
        return None if r.ok else str(r)

    r = run(instrument(net), pol, 5000, hooks=[hook])
    assert r.reason == "alarm", r.diagnostic
    assert len(seen) == r.steps


def test_initial_knowledge_is_vacuous(envelope):
    mn = instrument(envelope)
    assert check_complete_knowledge(mn).ok and check_sound_knowledge(mn).ok


def test_locked_without_probe_breaks_complete_knowledge():
    r = envelope_monitored_run()
    mn = r.final
    e1 = mn["E1"]
    mutated = mn.evolve({"E1": replace(e1, mstate=replace(e1.mstate, probe=None, alarm=False))})
    assert "KC-1" in {v.rule for v in check_complete_knowledge(mutated).violations}


def test_alarm_flag_gives_alarm_condition():
    mn = envelope_monitored_run().final
    assert mn["E1"].mstate.alarm
    assert alarm_condition(mn, "E1")


def test_active_probe_back_at_owner_gives_alarm_condition():
    r = envelope_monitored_run()
    # undo the final step: the alarming probe sits at the front of E1's queue
    before = replay(instrument(build_network(load("envelope.scn"))), r.trace.steps[:-1])
    front = before["E1"].mqueue[0]
    assert isinstance(front, InProbe) and front.probe == before["E1"].mstate.probe
    assert not before["E1"].mstate.alarm
    assert alarm_condition(before, "E1")


def test_no_alarm_condition_without_deadlock():
    for state in random_states(200, monitored=True):
        if deadlocked_set(state):
            continue
        assert not any(alarm_condition(state, n) for n in state.names)


def test_waiting_on_unlocked_service_breaks_sound_knowledge(envelope):
    mn = instrument(envelope)
    p1 = mn["P1"]
    bad = mn.evolve({"P1": replace(p1, mstate=replace(p1.mstate, waiting=frozenset({"E3"})))})
    assert [v.rule for v in check_sound_knowledge(bad).violations] == ["KS-2"]


def test_alarm_implies_cycle():
    mn = envelope_monitored_run().final
    lm = locked_map(mn)
    for n in mn.names:
        if mn[n].mstate.alarm:
            assert transitively_locked(lm, n, n)
    # a forged alarm on a deadlocked service is still sound, on a fresh network it is not
    forged = mn.evolve({"E2": replace(mn["E2"], mstate=MonitorState("E2", alarm=True))})
    assert "KS-5" not in {v.rule for v in check_sound_knowledge(forged).violations}
    fresh = instrument(build_network(load("envelope.scn")))
    assert check_sound_knowledge(fresh).ok
    fake = fresh.evolve({"E2": replace(fresh["E2"], mstate=MonitorState("E2", alarm=True))})
    assert "KS-5" in {v.rule for v in check_sound_knowledge(fake).violations}


def test_check_invariants_selects_families(envelope):
    mn = instrument(envelope)
    fake = mn.evolve({"E2": replace(mn["E2"], mstate=MonitorState("E2", alarm=True))})
    assert check_invariants(fake, "wf").ok
    assert not check_invariants(fake, "knowledge").ok
    assert not check_invariants(fake, "all").ok
    assert check_invariants(fake, "none").ok
