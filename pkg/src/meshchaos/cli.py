"""Command-line entry point: ``meshchaos <command> ...``."""

import argparse
import json
import logging
import sys
from pathlib import Path

from meshchaos import ctd, drift, pdg
from meshchaos.errors import DivergenceError, InputError, ReplayError
from meshchaos.faults import FaultPlan
from meshchaos.orchestrator import (
    EXIT_INPUT,
    EXIT_OK,
    RunConfig,
    replay,
    report_from_ledger,
    run_closed_loop,
)


def _emit(data, out=None):
    text = json.dumps(data, indent=1, sort_keys=True, default=str)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"invalid JSON: {exc.msg}", path=str(path), line=exc.lineno) from None
    except OSError as exc:
        raise InputError(str(exc.strerror), path=str(path)) from None


def cmd_run(args):
    cfg = RunConfig(
        app_path=args.app,
        scenario_dir=args.scenarios,
        level=args.level,
        target=args.target,
        patience=args.patience,
        max_rounds=args.max_rounds,
        seed=args.seed,
        out_dir=args.out,
        batch_size=args.batch,
        workers=args.workers,
        dump_trace=args.dump_trace,
        report_path=args.report,
    )
    report = run_closed_loop(cfg)
    print(f"rounds={report.rounds} fraction={report.fraction:.4f} stop={report.stop_reason!r}")
    for t in report.unreachable:
        print(f"unreachable: {t['test']} {t['edge'][0]}->{t['edge'][1]} {t['event']}")
    if report.findings:
        print(f"findings: {len(report.findings)} TestFailure run(s), see report")
    return report.exit_code


def cmd_coverage(args):
    report = report_from_ledger(_read_json(args.ledger), args.level)
    _emit(report.to_dict(), args.out)
    return EXIT_OK


def cmd_replay(args):
    traces = replay(args.log, args.round, args.app, args.scenarios)
    for k, tr in enumerate(traces):
        print(f"run {k}: {tr.test_id} {tr.classification.value} {tr.checksum()}")
        if args.dump_trace:
            out = Path(args.dump_trace)
            out.mkdir(parents=True, exist_ok=True)
            (out / f"round{args.round:03d}-{k:02d}.json").write_bytes(tr.to_bytes())
    return EXIT_OK


def cmd_ctd_generate(args):
    model = ctd.load_model(args.model)
    _emit(ctd.generate_covering_array(model, args.strength, seed=args.seed), args.out)
    return EXIT_OK


def cmd_ctd_coverage(args):
    model = ctd.load_model(args.model)
    tests = _read_json(args.tests)
    print(f"{ctd.interaction_coverage(model, args.strength, tests):.6f}")
    return EXIT_OK


def cmd_ctd_enumerate(args):
    _emit(ctd.enumerate_legal(ctd.load_model(args.model)), args.out)
    return EXIT_OK


def cmd_ctd_cluster(args):
    obs = []
    for lineno, line in enumerate(Path(args.observations).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            obs.append((row["vector"], row["output"]))
        except (json.JSONDecodeError, KeyError, TypeError):
            raise InputError("expected {\"vector\": {...}, \"output\": \"...\"}", path=args.observations, line=lineno) from None
    clusters = ctd.cluster_outputs(obs, args.threshold)
    _emit([c.to_dict() for c in clusters], args.out)
    return EXIT_OK


def cmd_ctd_derive(args):
    model = ctd.load_model(args.model)
    clusters = [ctd.OutputCluster.from_dict(c) for c in _read_json(args.clusters)]
    derived = ctd.derive_constraints(clusters, model)
    for c in derived:
        print(c)
    if args.out:
        Path(args.out).write_text(ctd.format_model(model.with_constraints(derived)))
    return EXIT_OK


def cmd_drift_monitor(args):
    base = drift.read_call_log(args.baseline)
    stream = drift.read_call_log(args.stream)
    apis = sorted(set(base) | set(stream)) if args.apis is None else args.apis.split(",")
    model = drift.fit_baseline([base], args.model, alpha=args.alpha, apis=apis)
    mon = drift.monitor_stream(model, stream, args.batch, args.threshold)
    for k, (n, log_bf, decision) in enumerate(mon.history, 1):
        print(json.dumps({"batch": k, "observations": n, "log_bf": log_bf, "decision": decision.value}))
    return EXIT_OK


def cmd_pdg_build(args):
    sensitive = tuple(s for s in (args.sensitive or "").split(",") if s)
    cfg = pdg.PdgConfig(max_depth=args.max_depth, min_samples_leaf=args.min_leaf, sensitive=sensitive)
    model = pdg.build(pdg.read_records(args.records), cfg)
    pdg.save_model(model, args.out)
    print(f"{len(model.buckets)} bucket(s), {len(model.paths())} path(s) -> {args.out}")
    return EXIT_OK


def cmd_pdg_compare(args):
    model = pdg.load_model(args.model)
    report = pdg.compare(model, pdg.read_records(args.tests), args.threshold)
    _emit(report.to_dict(), args.out)
    return EXIT_OK


def cmd_pdg_generate(args):
    model = pdg.load_model(args.model)
    unvisited = [pdg.PathRef.from_dict(p) for p in _read_json(args.unvisited)["unvisited"]]
    _emit(pdg.generate(model, unvisited, args.seed).to_dict(), args.out)
    return EXIT_OK


def cmd_perf_suggest(args):
    suggestions = _read_json(args.report)["perf"]["suggestions"]
    for s in suggestions:
        print(f"{s['edge'][0]}->{s['edge'][1]}: {s['action']} {s['current']}x -> {s['suggested']}x")
    if args.plan is None:
        return EXIT_OK
    if not args.confirm:
        print("not applied: pass --confirm to write the suggested multipliers into the plan")
        return EXIT_OK
    plan = FaultPlan.from_dict(_read_json(args.plan))
    load = dict(plan.load)
    for s in suggestions:
        load[tuple(s["edge"])] = s["suggested"]
    updated = FaultPlan(plan.rules, plan.barriers, load, plan.placement)
    Path(args.plan).write_text(json.dumps(updated.to_dict(), indent=1, sort_keys=True) + "\n")
    print(f"applied to {args.plan}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="meshchaos", description="Coverage-guided chaos testing on a simulated service mesh.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="closed-loop fault search until the coverage target")
    r.add_argument("--app", help="application spec (default: bundled demo)")
    r.add_argument("--scenarios", help="scenario directory (default: bundled demo)")
    r.add_argument("--level", type=int, default=1)
    r.add_argument("--target", type=float, default=1.0)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--patience", type=int, default=5)
    r.add_argument("--max-rounds", type=int, default=100)
    r.add_argument("--batch", type=int, default=8)
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--out", default="chaos-out")
    r.add_argument("--report", help="report path (default: <out>/report.json)")
    r.add_argument("--dump-trace", action="store_true", help="write every trace under <out>/traces")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("coverage", help="coverage report from a persisted ledger")
    c.add_argument("--ledger", required=True)
    c.add_argument("--level", type=int)
    c.add_argument("--out")
    c.set_defaults(func=cmd_coverage)

    rp = sub.add_parser("replay", help="re-execute one logged round")
    rp.add_argument("--log", required=True)
    rp.add_argument("--round", type=int, required=True)
    rp.add_argument("--app")
    rp.add_argument("--scenarios")
    rp.add_argument("--dump-trace", metavar="DIR")
    rp.set_defaults(func=cmd_replay)

    cd = sub.add_parser("ctd", help="combinatorial test design").add_subparsers(dest="ctd_command", required=True)
    g = cd.add_parser("generate")
    g.add_argument("--model", required=True)
    g.add_argument("--strength", type=int, default=2)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out")
    g.set_defaults(func=cmd_ctd_generate)
    cv = cd.add_parser("coverage")
    cv.add_argument("--model", required=True)
    cv.add_argument("--strength", type=int, default=2)
    cv.add_argument("--tests", required=True, help="JSON list of test vectors")
    cv.set_defaults(func=cmd_ctd_coverage)
    en = cd.add_parser("enumerate")
    en.add_argument("--model", required=True)
    en.add_argument("--out")
    en.set_defaults(func=cmd_ctd_enumerate)
    cl = cd.add_parser("cluster")
    cl.add_argument("--observations", required=True, help="JSON lines of {vector, output}")
    cl.add_argument("--threshold", type=float, default=0.6)
    cl.add_argument("--out")
    cl.set_defaults(func=cmd_ctd_cluster)
    dv = cd.add_parser("derive")
    dv.add_argument("--model", required=True)
    dv.add_argument("--clusters", required=True, help="categorized clusters JSON")
    dv.add_argument("--out", help="write the model with derived constraints here")
    dv.set_defaults(func=cmd_ctd_derive)

    dr = sub.add_parser("drift", help="call-stream drift detection").add_subparsers(dest="drift_command", required=True)
    m = dr.add_parser("monitor")
    m.add_argument("--baseline", required=True)
    m.add_argument("--stream", required=True)
    m.add_argument("--model", choices=["multinomial", "markov"], default="markov")
    m.add_argument("--threshold", type=float, default=drift.DEFAULT_THRESHOLD)
    m.add_argument("--batch", type=int, default=25)
    m.add_argument("--alpha", type=float, default=drift.DEFAULT_ALPHA)
    m.add_argument("--apis", help="comma-separated API alphabet (default: ids seen in either log)")
    m.set_defaults(func=cmd_drift_monitor)

    pd = sub.add_parser("pdg", help="dependency-graph models of one endpoint").add_subparsers(dest="pdg_command", required=True)
    b = pd.add_parser("build")
    b.add_argument("--records", required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--sensitive", help="comma-separated numeric request fields")
    b.add_argument("--max-depth", type=int, default=8)
    b.add_argument("--min-leaf", type=int, default=5)
    b.set_defaults(func=cmd_pdg_build)
    cp = pd.add_parser("compare")
    cp.add_argument("--model", required=True)
    cp.add_argument("--tests", required=True)
    cp.add_argument("--threshold", type=float, default=0.1)
    cp.add_argument("--out")
    cp.set_defaults(func=cmd_pdg_compare)
    gn = pd.add_parser("generate")
    gn.add_argument("--model", required=True)
    gn.add_argument("--unvisited", required=True, help="report written by 'pdg compare'")
    gn.add_argument("--seed", type=int, default=0)
    gn.add_argument("--out")
    gn.set_defaults(func=cmd_pdg_generate)

    pf = sub.add_parser("perf", help="performance suggestions").add_subparsers(dest="perf_command", required=True)
    s = pf.add_parser("suggest")
    s.add_argument("--report", required=True, help="run report")
    s.add_argument("--plan", help="fault plan whose load multipliers would be updated")
    s.add_argument("--confirm", action="store_true", help="actually write the suggestions into --plan")
    s.set_defaults(func=cmd_perf_suggest)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (InputError, ReplayError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
