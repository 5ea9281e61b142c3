"""Command line interface: check, run, step, encode-recovery, replay.

Exit code is 0 iff no error network was encountered and, when typing was
requested, it succeeded.  ``UBSC_COLOR`` toggles ANSI colour.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from collections import Counter

from . import checker as ck
from . import engine as eng
from . import safety as sf
from . import terms as t
from .render import render_network
from .syntax import UBSCSyntaxError, _Parser, lex, parse, pretty_print


def _color(s: str, code: str) -> str:
    if os.environ.get("UBSC_COLOR", "").lower() in ("0", "no", "off", "false"):
        return s
    if not sys.stdout.isatty() and "UBSC_COLOR" not in os.environ:
        return s
    return f"\033[{code}m{s}\033[0m"


def parse_declared(text: str, type_decls=None) -> dict:
    """Parse a declared linear context: ``*s:(1, end), s:(1, !int.end)``."""
    p = _Parser(lex(text))
    p.type_decls = dict(type_decls or {})
    out = {}
    while True:
        aggr = False
        if p.at("*"):
            p.next()
            aggr = True
        name = p.name()
        p.expect(":")
        p.expect("(")
        ctok = p.next()
        if ctok.kind != "int":
            p.fail("expected a state counter", ctok)
        p.expect(",")
        ty = p.stype(frozenset())
        p.expect(")")
        out[t.Endpoint(name, aggr)] = (int(ctok.text), ty)
        if p.at(","):
            p.next()
            continue
        break
    if p.peek().kind != "eof":
        p.fail(f"trailing input {p.peek().text!r}")
    return out


def _load(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        return parse(fh.read(), filename=path)


def _gamma(prog) -> ck.Gamma:
    return ck.Gamma(shared=prog.shared_types())


def _lint_unit_sends(net: t.Network):
    """The recovery encoding assumes senders never send the unit value; warn
    when a payload is literally unit."""
    from . import values as v
    hits = []

    def walk_p(p):
        match p:
            case t.Send(ch, e, b):
                if e == v.Lit(v.UNIT):
                    hits.append(ch)
                walk_p(b)
            case t.Request(_, _, b) | t.Accept(_, _, b) | t.Select(_, _, b):
                walk_p(b)
            case t.Recv(_, _, _, b):
                walk_p(b)
            case t.Branch(_, arms, df):
                for _, ap in arms:
                    walk_p(ap)
                walk_p(df)
            case t.Sum(l, r) | t.Cond(_, l, r) | t.Recover(l, r):
                walk_p(l)
                walk_p(r)
            case t.Defs(defs, b):
                for _, _, db in defs:
                    walk_p(db)
                walk_p(b)
            case _:
                pass

    for nd in t.flatten_nodes(net)[1]:
        walk_p(nd.process)
    return hits


def cmd_check(args) -> int:
    try:
        prog = _load(args.file)
    except UBSCSyntaxError as e:
        print(_color(str(e), "31"))
        return 2
    declared = None
    if args.context:
        declared = parse_declared(args.context, prog.type_decls)
    for ch in _lint_unit_sends(prog.network):
        print(_color(f"warning: unit value sent on {ch!r}; recovery tests "
                     f"cannot distinguish it from a default", "33"))
    net = eng.encode_network(prog.network)
    result = ck.type_network(_gamma(prog), net, declared=declared)
    if result.ok:
        print(_color(result.render(), "32"))
        if args.derivation:
            for app in result.trace:
                size = "" if app.delta_size is None else f" |D|={app.delta_size}"
                extra = f"  {app.judgment}" if app.judgment else ""
                print(f"  {app.rule:<8} {app.subject}{size}{extra}")
        return 0
    print(_color(result.render(), "31"))
    return 1


def cmd_encode_recovery(args) -> int:
    try:
        prog = _load(args.file)
    except UBSCSyntaxError as e:
        print(_color(str(e), "31"))
        return 2
    prog.network = eng.encode_network(prog.network)
    sys.stdout.write(pretty_print(prog))
    return 0


def cmd_run(args) -> int:
    try:
        prog = _load(args.file)
    except UBSCSyntaxError as e:
        print(_color(str(e), "31"))
        return 2
    seeds = [args.seed]
    if args.sweep:
        lo, hi = args.sweep.split("..")
        seeds = list(range(int(lo), int(hi) + 1))
    exit_code = 0
    for seed in seeds:
        code = _run_one(prog, args, seed, sweeping=len(seeds) > 1)
        exit_code = exit_code or code
    return exit_code


def _run_one(prog, args, seed: int, sweeping: bool) -> int:
    net = prog.network
    gamma = _gamma(prog)
    if args.check:
        result = ck.type_network(gamma, eng.encode_network(net))
        if not result.ok:
            print(_color(result.render(), "31"))
            return 1
    cfg = eng.SchedulerConfig(seed=seed, loss_rate=args.loss_rate,
                              recovery_bias=args.recovery_bias,
                              max_steps=args.max_steps)
    safety_failures = []

    def on_step(state, step):
        if args.safety:
            rep = sf.is_error_network(state.to_network())
            if rep.verdict != "ok":
                safety_failures.append((step.index, rep))

    trace = eng.run_scheduler(net, cfg, on_step=on_step,
                              networks=args.trace_networks)
    if args.trace:
        path = args.trace if not sweeping else f"{args.trace}.{seed}"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(trace.to_jsonl())
    hist = Counter(s.rule for s in trace.steps)
    tag = f"[seed {seed}] " if sweeping else ""
    print(f"{tag}steps: {len(trace.steps)}")
    print(f"{tag}rules: " + ", ".join(f"{k}={v}" for k, v in sorted(hist.items())))
    if args.safety:
        verdict = ("ok" if not safety_failures
                   else f"{len(safety_failures)} error-network states")
        print(f"{tag}safety: {verdict}")
    if not sweeping or args.verbose:
        print(f"{tag}final network:")
        print(render_network(eng.normalize(trace.final.to_network())))
    if safety_failures:
        idx, rep = safety_failures[0]
        print(_color(f"safety violation at step {idx}: {rep.render()}", "31"))
        return 1
    return 0


def cmd_replay(args) -> int:
    try:
        prog = _load(args.file)
    except UBSCSyntaxError as e:
        print(_color(str(e), "31"))
        return 2
    with open(args.script, "r", encoding="utf-8") as fh:
        text = fh.read().strip()
    if text.startswith("["):
        steps = json.loads(text)
        try:
            state, digests = eng.run_script(prog.network, steps)
        except eng.EngineError as e:
            print(_color(f"replay failed: {e}", "31"))
            return 1
        for i, d in enumerate(digests):
            print(f"step {i}: {d}")
        print("final:")
        print(render_network(eng.normalize(state.to_network())))
        return 0
    # trace file: re-run with the recorded config and compare digests
    lines = [json.loads(l) for l in text.splitlines() if l.strip()]
    header = lines[0]
    cfg = eng.SchedulerConfig(seed=header["seed"], loss_rate=header["loss_rate"],
                              recovery_bias=header["recovery_bias"],
                              max_steps=header["max_steps"])
    trace = eng.run_scheduler(prog.network, cfg)
    recorded = [l["digest"] for l in lines[1:]]
    fresh = [s.digest for s in trace.steps]
    if recorded != fresh:
        for i, (a, b) in enumerate(zip(recorded, fresh)):
            if a != b:
                print(_color(f"digest mismatch at step {i}: {a} != {b}", "31"))
                return 1
        print(_color(f"length mismatch: {len(recorded)} vs {len(fresh)}", "31"))
        return 1
    print(f"replay ok: {len(fresh)} steps reproduce recorded digests")
    return 0


def cmd_step(args) -> int:
    try:
        prog = _load(args.file)
    except UBSCSyntaxError as e:
        print(_color(str(e), "31"))
        return 2
    state = eng.RunState.from_network(eng.encode_network(prog.network))
    history = []
    script = []
    while True:
        print()
        print(render_network(eng.normalize(state.to_network())))
        redexes = eng.enabled_redexes(state)
        if not redexes:
            print("no enabled redexes; terminal state")
        for i, r in enumerate(redexes):
            fam = " (recovery)" if r.rule in eng.RECOVERY_RULES else ""
            recv = f" receivers={list(r.receivers)}" if r.receivers else ""
            lab = f" label={r.detail[0]}" if r.detail else ""
            print(f"  [{i}] {r.rule} on {r.session} at node#{r.sender}{recv}{lab}{fam}")
        try:
            line = input("choice (index, u=undo, q=quit)> ").strip()
        except EOFError:
            line = "q"
        if line == "q":
            break
        if line == "u":
            if history:
                state = history.pop()
                script.pop()
            else:
                print("nothing to undo")
            continue
        try:
            idx = int(line)
            r = redexes[idx]
        except (ValueError, IndexError):
            print("invalid index")
            continue
        chosen = r.receivers
        if r.rule in eng.BROADCAST_RULES and r.receivers:
            try:
                sub = input(f"receivers {list(r.receivers)} (all/none/ids)> ").strip()
            except EOFError:
                sub = "all"
            if sub == "none":
                chosen = ()
            elif sub and sub != "all":
                chosen = tuple(int(x) for x in sub.replace(",", " ").split())
        history.append(state)
        entry = {"rule": r.rule, "sender": r.sender, "session": r.session,
                 "receivers": list(chosen)}
        if r.detail:
            entry["label"] = r.detail[0]
        script.append(entry)
        state = eng.apply_redex(state, r, chosen)
        print(f"applied {r.rule}; digest {state.digest()}")
    if args.script and script:
        with open(args.script, "w", encoding="utf-8") as fh:
            json.dump(script, fh, indent=1)
        print(f"script with {len(script)} steps written to {args.script}")
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="ubsc",
        description="Toolchain for session-typed unreliable broadcast "
                    "networks: typecheck, simulate, explore and replay.",
    )
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("check", help="typecheck a program")
    p.add_argument("file")
    p.add_argument("--context", help="declared linear context, e.g. "
                                     "'*s:(1, end), s:(1, end)'")
    p.add_argument("--derivation", action="store_true",
                   help="dump the derivation trace")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("run", help="run the seeded scheduler")
    p.add_argument("file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--loss-rate", type=float, default=0.1)
    p.add_argument("--recovery-bias", type=float, default=0.2)
    p.add_argument("--max-steps", type=int, default=1000)
    p.add_argument("--trace", help="write a JSONL trace here")
    p.add_argument("--trace-networks", action="store_true",
                   help="include the pretty-printed network in each record")
    p.add_argument("--check", action="store_true", help="typecheck first")
    p.add_argument("--safety", action="store_true",
                   help="verify no error network is reached")
    p.add_argument("--sweep", help="seed range a..b")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("step", help="interactive stepper")
    p.add_argument("file")
    p.add_argument("--script", help="append accepted choices to this file")
    p.set_defaults(func=cmd_step)

    p = sub.add_parser("encode-recovery",
                       help="print the recovery-free encoding of a program")
    p.add_argument("file")
    p.set_defaults(func=cmd_encode_recovery)

    p = sub.add_parser("replay", help="replay a schedule script or trace file")
    p.add_argument("file")
    p.add_argument("script")
    p.set_defaults(func=cmd_replay)

    args = ap.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
