import csv
import subprocess
import sys
from collections import Counter
from importlib import resources

import pytest
from hypothesis import given, strategies as st

from srpc_sentinel import cli
from srpc_sentinel.bench import CSV_FIELDS, bench, bench_run, message_kind, window_series, write_csv
from srpc_sentinel.core import TAU, Comm, Internal, Recv, Send, Tag
from srpc_sentinel.generate import GenParams, generate
from srpc_sentinel.labels import LabelError, format_label, parse_label, parse_schedule
from srpc_sentinel.monitor import (
    TICK,
    MonIn,
    MonInternal,
    MonOut,
    MonProbeIn,
    Probe,
    ProbeComm,
    Timeout,
    instrument,
)
from srpc_sentinel.oracle import InvariantReport, InvariantViolation, deadlocked_set
from srpc_sentinel.render import deadlock_line_members, render_trace, trace_events
from srpc_sentinel.script import build_network, parse_scenario, render_scenario
from srpc_sentinel.sim import FairRoundRobin, Scripted, SeededRandom, parse_trace, run

from conftest import load, scenario_text, schedule


def scenario_path(name):
    return str(resources.files("srpc_sentinel").joinpath("scenarios", name))


# --- generator --------------------------------------------------------------------------


def test_ring_of_three_is_the_envelope():
    g = generate(GenParams(6, cycle_density=1.0, max_call_depth=1, seed=0))
    assert render_scenario(g).splitlines()[1:] == render_scenario(load("envelope.scn")).splitlines()[1:]
    assert render_scenario(g).splitlines()[0] == scenario_text("envelope.scn").splitlines()[1]


def test_same_params_same_scenario():
    for seed in range(20):
        p = GenParams(5 + seed, seed=seed)
        assert generate(p) == generate(p)
        assert render_scenario(generate(p)) == render_scenario(generate(p))


def test_no_ring_means_no_deadlock():
    for seed in range(1000):
        net = build_network(generate(GenParams(4 + seed % 13, cycle_density=0.0, seed=seed)))
        r = run(net, SeededRandom(seed), 3000)
        assert r.reason == "quiescent", seed
        assert deadlocked_set(r.final) == frozenset(), seed


def test_generated_scenarios_reparse():
    for seed in range(50):
        sc = generate(GenParams(3 + seed % 20, cycle_density=0.5, seed=seed))
        assert parse_scenario(render_scenario(sc)) == parse_scenario(render_scenario(sc))
        assert parse_scenario(render_scenario(sc)).sessions == sc.sessions


@pytest.mark.parametrize(
    "kwargs", [dict(n_services=1), dict(n_services=4, cycle_density=1.5), dict(n_services=4, max_call_depth=0)]
)
def test_gen_params_validation(kwargs):
    with pytest.raises(ValueError):
        GenParams(**kwargs)


# --- benchmark ----------------------------------------------------------------------------


def test_csv_header_is_stable(tmp_path):
    rows = [bench_run(8, 1, "eager")]
    out = tmp_path / "b.csv"
    write_csv(rows, str(out))
    header = out.read_text().splitlines()[0]
    assert header == (
        "run_id,n_services,strategy,delay,service_msgs,probe_msgs,total_msgs,deadlocked,detection_step,stop_reason"
    )
    assert tuple(header.split(",")) == CSV_FIELDS
    (row,) = csv.DictReader(out.open())
    assert row["run_id"] == "8-1" and row["strategy"] == "eager"


@pytest.mark.parametrize("strategy", ["eager", "delayed"])
def test_bench_counts(strategy):
    for seed in range(6):
        r = bench_run(16, seed, strategy)
        assert r.service_msgs == r.unmonitored_service_msgs
        assert r.total_msgs >= r.service_msgs + r.probe_msgs
        assert (r.detection_step is not None) <= r.deadlocked


def test_bench_rows_are_deterministic_and_ordered():
    a = bench([8, 12], 2, "delayed", delay=10, seed_base=5, workers=1)
    b = bench([8, 12], 2, "delayed", delay=10, seed_base=5, workers=2)
    assert [r.csv_row() for r in a] == [r.csv_row() for r in b]
    assert [r.run_id for r in a] == ["8-0", "8-1", "12-0", "12-1"]


def test_message_kinds_and_windows():
    path = [Comm("a", "b", Tag.Q), ProbeComm("a", "b", Probe("a", 0)), MonInternal("a", MonIn("b", Tag.R)),
            MonInternal("a", MonOut("b", Tag.R)), Internal("a", TAU)]
    assert [message_kind(a) for a in path] == ["service", "probe", "hop", "hop", None]
    assert window_series(path, window=3) == [
        {"window": 0, "service": 1, "probe": 1, "total": 3},
        {"window": 1, "service": 0, "probe": 0, "total": 1},
    ]


# --- rendering ------------------------------------------------------------------------------


def envelope_alarm():
    net = build_network(load("envelope.scn"))
    pol = Scripted(schedule("envelope_deadlock.sched"), fallback=FairRoundRobin())
    mn = instrument(net)
    return mn, run(mn, pol, 5000)


def test_envelope_render_names_the_cycle():
    start, r = envelope_alarm()
    text = render_trace(start, r.trace.steps, r.alarms)
    assert text.splitlines()[0].split() == list(start.names)
    assert deadlock_line_members(text) == deadlocked_set(r.final)
    assert len(deadlock_line_members(text)) == 6


def test_unmonitored_render_shows_sends_and_locks():
    net = build_network(load("envelope.scn"))
    steps = schedule("envelope_deadlock.sched")
    events = trace_events(net, steps)
    assert ("E1", "P2 ! Q(s1)") in events
    assert ("E1", "=> LOCK(P2)") in events
    assert deadlock_line_members(render_trace(net, steps)) is None


@pytest.mark.parametrize("monitored", [False, True])
def test_quiescent_render_has_matched_locks(monitored):
    net = build_network(load("envelope.scn"))
    start = instrument(net) if monitored else net
    r = run(start, Scripted(schedule("envelope_safe.sched"), fallback=FairRoundRobin()), 5000)
    assert r.reason == "quiescent"
    events = trace_events(start, r.trace.steps)
    locks = Counter(w for w, t in events if t.startswith("=> LOCK"))
    unlocks = Counter(w for w, t in events if t == "=> UNLOCK")
    assert locks == unlocks and locks
    assert "DEADLOCK" not in render_trace(start, r.trace.steps, r.alarms)


def test_render_excludes_services_waiting_on_the_cycle():
    text = scenario_text("envelope.scn").replace("services: E1 E2 E3 P1 P2 P3", "services: E1 E2 E3 P1 P2 P3 X")
    text += "session s4: query X [call E1 []]\n"
    net = build_network(parse_scenario(text))
    lead = [parse_label(s) for s in (
        "tau X send X CS", "comm X X CS", "tau X", "tau X recv _ Q", "tau X send E1 Q", "comm X E1 Q",
    )]
    mn = instrument(net)
    r = run(mn, Scripted(lead + schedule("envelope_deadlock.sched"), fallback=FairRoundRobin()), 5000)
    assert r.reason == "alarm"
    dead = deadlocked_set(r.final)
    assert "X" in dead and len(dead) == 7
    members = deadlock_line_members(render_trace(mn, r.trace.steps, r.alarms))
    assert members == dead - {"X"}
    assert members <= dead


# --- labels ---------------------------------------------------------------------------------


ids = st.sampled_from(["A", "E1", "srv_2", "_"])
tags = st.sampled_from(list(Tag))
probes = st.builds(Probe, st.sampled_from(["A", "E1"]), st.integers(0, 10**6))
actions = st.one_of(
    st.builds(Internal, ids, st.one_of(st.just(TAU), st.builds(Recv, ids, tags), st.builds(Send, ids, tags))),
    st.builds(Comm, ids, ids, tags),
    st.builds(MonInternal, ids, st.one_of(
        st.builds(MonIn, ids, tags), st.builds(MonOut, ids, tags), st.builds(MonProbeIn, ids, probes),
        st.just(Timeout()),
    )),
    st.builds(ProbeComm, ids, ids, probes),
    st.just(TICK),
)


@given(actions)
def test_label_round_trip(a):
    assert parse_label(format_label(a)) == a


@pytest.mark.parametrize("text", ["comm A B X", "probe A B nope", "mon A sideways", "", "tau"])
def test_bad_labels(text):
    with pytest.raises(LabelError):
        parse_label(text)


def test_schedule_ignores_comments_and_indices():
    acts = parse_schedule("# hi\n0 tau A\n\ncomm A B Q  # trailing\n")
    assert acts == [Internal("A", TAU), Comm("A", "B", Tag.Q)]


# --- command line -----------------------------------------------------------------------------


def test_parse_sizes():
    assert cli.parse_sizes("16,32,...,512") == [16, 32, 64, 128, 256, 512]
    assert cli.parse_sizes("10,20,...,45") == [10, 20, 40, 45]
    assert cli.parse_sizes("5,7,...,11") == [5, 7, 9, 11]
    assert cli.parse_sizes("3,9") == [3, 9]
    with pytest.raises(cli.UsageError):
        cli.parse_sizes("16,...,512")


def test_simulate_scripted_deadlock(tmp_path, capsys):
    out = tmp_path / "t.trace"
    code = cli.main([
        "simulate", "--scenario", scenario_path("envelope.scn"), "--monitored",
        "--policy", "script", scenario_path("envelope_deadlock.sched"),
        "--check-invariants", "all", "--trace-out", str(out), "--render",
    ])
    text = capsys.readouterr().out
    assert code == 0
    assert "stop=alarm" in text and "deadlocked={E1 E2 E3 P1 P2 P3}" in text
    assert "DEADLOCK detected by E1" in text
    t = parse_trace(out.read_text())
    assert out.read_text().startswith("# scenario=envelope seed=0 policy=script\n")
    assert t.alarms and t.monitored


def test_simulate_random_is_repeatable(tmp_path, capsys):
    paths = []
    for k in range(2):
        p = tmp_path / f"{k}.trace"
        assert cli.main(["simulate", "--scenario", scenario_path("proxy_loop.scn"), "--seed", "9",
                         "--monitored", "--probe-delay", "3", "--trace-out", str(p)]) == 0
        paths.append(p.read_text())
    assert paths[0] == paths[1]


def test_oracle_command(capsys):
    code = cli.main(["oracle", "--scenario", scenario_path("proxy_loop.scn"), "--seed", "0"])
    out = capsys.readouterr().out
    assert code == 0 and "well-formed: yes" in out


def test_parse_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.scn"
    bad.write_text("services: A\nsession s: query B []\n")
    assert cli.main(["simulate", "--scenario", str(bad)]) == cli.EXIT_PARSE
    sched = tmp_path / "bad.sched"
    sched.write_text("comm A\n")
    code = cli.main(["simulate", "--scenario", scenario_path("proxy_loop.scn"), "--policy", "script", str(sched)])
    assert code == cli.EXIT_PARSE
    assert "parse error" in capsys.readouterr().err


def test_aborted_run_exit_code(tmp_path, capsys):
    sched = tmp_path / "s.sched"
    sched.write_text("comm server proxy Q\n")
    code = cli.main(["simulate", "--scenario", scenario_path("proxy_loop.scn"), "--policy", "script", str(sched)])
    assert code == cli.EXIT_ABORTED
    assert "stop=aborted" in capsys.readouterr().out


def test_invariant_violation_exit_code(monkeypatch, capsys):
    broken = InvariantReport([InvariantViolation("WF-NET", ("a",), "forced")])
    monkeypatch.setattr(cli, "check_invariants", lambda s, which: broken)
    code = cli.main(["simulate", "--scenario", scenario_path("proxy_loop.scn"), "--check-invariants", "wf"])
    assert code == cli.EXIT_INVARIANT
    assert cli.main(["oracle", "--scenario", scenario_path("proxy_loop.scn"), "--seed", "1"]) == cli.EXIT_INVARIANT


def test_bench_command(tmp_path, capsys):
    out = tmp_path / "b.csv"
    code = cli.main(["bench", "--sizes", "8,12", "--runs", "2", "--strategy", "eager", "--out", str(out),
                     "--workers", "1"])
    assert code == 0
    assert len(out.read_text().splitlines()) == 5
    assert "n=8 runs=2" in capsys.readouterr().out


def test_verify_command(capsys):
    assert cli.main(["verify", "--suite", "transparency", "--runs", "5", "--seed-base", "0"]) == 0
    assert "transparency-completeness: ok" in capsys.readouterr().out


def test_console_script_runs():
    r = subprocess.run([sys.executable, "-m", "srpc_sentinel.cli", "oracle", "--scenario",
                        scenario_path("envelope.scn"), "--seed", "3"], capture_output=True, text=True)
    assert r.returncode == 0 and "deadlocked:" in r.stdout
