"""The ``srpc-sentinel`` command line."""
from __future__ import annotations

import argparse
import statistics
import sys
from pathlib import Path

from .bench import DEFAULT_DELAY, bench, write_csv
from .core import SrpcViolation
from .labels import LabelError, parse_schedule
from .monitor import instrument
from .oracle import check_invariants, deadlocked_set, locked_map
from .render import render_trace
from .script import ParseError, build_network, parse_scenario
from .sim import FairRoundRobin, Scripted, SeededRandom, format_trace, run
from .verify import SUITES, run_suite

EXIT_OK, EXIT_INVARIANT, EXIT_PARSE, EXIT_ABORTED = 0, 2, 3, 4


class UsageError(Exception):
    pass


def parse_sizes(text: str) -> list[int]:
    """Comma list of sizes; ``a,b,...,z`` continues the progression a, b up to z
    (geometric when b is a multiple of a, arithmetic otherwise)."""
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if "..." not in parts:
        return [int(p) for p in parts]
    i = parts.index("...")
    if i < 2 or i != len(parts) - 2:
        raise UsageError("an ellipsis needs two sizes before it and one after it")
    head, last = [int(p) for p in parts[:i]], int(parts[-1])
    a, b = head[-2], head[-1]
    out = head[:]
    geometric = a > 0 and b % a == 0 and b // a > 1
    while True:
        nxt = out[-1] * (b // a) if geometric else out[-1] + (b - a)
        if nxt > last or nxt <= out[-1]:
            break
        out.append(nxt)
    if out[-1] != last:
        out.append(last)
    return out


def _load_scenario(path: str):
    p = Path(path)
    return parse_scenario(p.read_text(), name=p.stem)


def _invariant_hook(which: str):
    def hook(i, a, s):
        r = check_invariants(s, which)
        return None if r.ok else f"step {i}: " + "; ".join(str(v) for v in r.violations)

    return hook


def cmd_simulate(args) -> int:
    sc = _load_scenario(args.scenario)
    kind = args.policy[0]
    if kind == "script":
        if len(args.policy) != 2:
            raise UsageError("--policy script needs a schedule file")
        schedule = parse_schedule(Path(args.policy[1]).read_text())
        policy = Scripted(schedule, fallback=FairRoundRobin(), ident="script")
    elif len(args.policy) != 1 or kind not in ("random", "fair"):
        raise UsageError(f"unknown policy {' '.join(args.policy)!r}")
    else:
        policy = SeededRandom(args.seed) if kind == "random" else FairRoundRobin()

    state = build_network(sc)
    if args.monitored:
        state = instrument(state, args.probe_delay)
    hooks = []
    if args.check_invariants != "none":
        first = check_invariants(state, args.check_invariants)
        if not first.ok:
            print("initial state: " + "; ".join(str(v) for v in first.violations), file=sys.stderr)
            return EXIT_INVARIANT
        hooks.append(_invariant_hook(args.check_invariants))

    res = run(state, policy, args.max_steps, hooks=hooks, stop_on_alarm=args.stop_on_alarm)
    res.trace.scenario, res.trace.seed = sc.name, args.seed
    if args.trace_out:
        Path(args.trace_out).write_text(format_trace(res.trace))
    if args.render:
        print(render_trace(state, res.trace.steps, res.alarms), end="")
    dl = deadlocked_set(res.final)
    print(f"stop={res.reason} steps={res.steps} alarms={len(res.alarms)} "
          f"deadlocked={{{' '.join(sorted(dl))}}}")
    for al in res.alarms:
        print(al)
    if res.reason == "invariant-violation":
        print(res.diagnostic, file=sys.stderr)
        return EXIT_INVARIANT
    if res.reason == "aborted":
        print(res.diagnostic, file=sys.stderr)
        return EXIT_ABORTED
    return EXIT_OK


def cmd_oracle(args) -> int:
    sc = _load_scenario(args.scenario)
    net = build_network(sc)
    steps = args.at_step if args.at_step is not None else args.max_steps
    res = run(net, SeededRandom(args.seed), steps, stop_on_alarm=False)
    if res.reason == "aborted":
        print(res.diagnostic, file=sys.stderr)
        return EXIT_ABORTED
    lm = locked_map(res.final)
    dl = deadlocked_set(res.final)
    wf = check_invariants(res.final, "wf")
    print(f"scenario={sc.name} seed={args.seed} step={res.steps} stop={res.reason}")
    print("locked: " + (" ".join(f"{a}->{b}" for a, b in sorted(lm.items())) or "-"))
    print(f"deadlocked: {{{' '.join(sorted(dl))}}}")
    print(f"well-formed: {'yes' if wf.ok else 'no'}")
    for v in wf.violations:
        print(f"  {v}")
    return EXIT_OK if wf.ok else EXIT_INVARIANT


def cmd_bench(args) -> int:
    sizes = parse_sizes(args.sizes)
    rows = bench(sizes, args.runs, args.strategy, args.probe_delay, args.seed_base, args.workers)
    write_csv(rows, args.out)
    for n in sizes:
        rs = [r for r in rows if r.n_services == n]
        ratio = statistics.mean(r.total_msgs / max(1, r.unmonitored_service_msgs) for r in rs)
        dead = sum(r.deadlocked for r in rs) / len(rs)
        probes = statistics.mean(r.probe_msgs for r in rs)
        print(f"n={n} runs={len(rs)} deadlocked={dead:.2f} msg_ratio={ratio:.2f} mean_probes={probes:.1f}")
    return EXIT_OK


def cmd_verify(args) -> int:
    ok = True
    for r in run_suite(args.suite, args.runs, args.seed_base):
        print(r.summary())
        for f in r.failures:
            print(f"  {f}")
        ok &= r.ok
    return EXIT_OK if ok else EXIT_INVARIANT


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="srpc-sentinel", description="Simulate and monitor SRPC networks.")
    sub = ap.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("simulate", help="run a scenario")
    s.add_argument("--scenario", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--policy", nargs="+", default=["random"], metavar="KIND",
                   help="random, fair, or 'script FILE'")
    s.add_argument("--monitored", action="store_true")
    s.add_argument("--probe-delay", type=int, default=0)
    s.add_argument("--max-steps", type=int, default=100_000)
    s.add_argument("--check-invariants", choices=["all", "wf", "knowledge", "none"], default="none")
    s.add_argument("--trace-out")
    s.add_argument("--render", action="store_true")
    s.add_argument("--keep-going", dest="stop_on_alarm", action="store_false",
                   help="continue after the first alarm")
    s.set_defaults(func=cmd_simulate)

    o = sub.add_parser("oracle", help="report locks and deadlocks of an unmonitored run")
    o.add_argument("--scenario", required=True)
    o.add_argument("--seed", type=int, required=True)
    o.add_argument("--at-step", type=int)
    o.add_argument("--max-steps", type=int, default=100_000)
    o.set_defaults(func=cmd_oracle)

    b = sub.add_parser("bench", help="message-count benchmark")
    b.add_argument("--sizes", required=True)
    b.add_argument("--runs", type=int, required=True)
    b.add_argument("--strategy", choices=["eager", "delayed"], required=True)
    b.add_argument("--probe-delay", type=int, default=DEFAULT_DELAY)
    b.add_argument("--out", required=True)
    b.add_argument("--seed-base", type=int, default=0)
    b.add_argument("--workers", type=int)
    b.set_defaults(func=cmd_bench)

    v = sub.add_parser("verify", help="seeded property sweeps")
    v.add_argument("--suite", choices=SUITES, required=True)
    v.add_argument("--runs", type=int, required=True)
    v.add_argument("--seed-base", type=int, required=True)
    v.set_defaults(func=cmd_verify)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, LabelError) as e:
        print(f"parse error: {e}", file=sys.stderr)
        return EXIT_PARSE
    except SrpcViolation as e:
        print(f"aborted: {e}", file=sys.stderr)
        return EXIT_ABORTED
    except (UsageError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
