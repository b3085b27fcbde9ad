"""Command-line entry point.

Exit codes: 0 on success, 1 on validation or runtime errors, 2 on usage
errors (argparse's default).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .compiler import compile_flow, emit_dot, emit_plan_text, parse_plan_text
from .deploy import DeployError, bind, emit_config_text
from .examples import EXAMPLES, build_example
from .ir import FlowError, LocationId
from .runtime import Manifest, run_local_distributed, run_oracle
from .runtime.bench import bench_channel
from .runtime.errors import RuntimeFailure
from .runtime.manifest import DEFAULT_BASE_PORT
from .runtime.transport import make_transport
from .runtime.worker import DEFAULT_HANDSHAKE_TIMEOUT, run_worker
from .staging import StagingError

THROUGHPUT_FLOOR = 50_000


def _example_args(p: argparse.ArgumentParser, cluster: bool = True) -> None:
    p.add_argument("example", choices=sorted(EXAMPLES))
    if cluster:
        p.add_argument("--cluster-size", type=int, default=2, metavar="N")


def _build(args, cloud: bool = False):
    return build_example(args.example, cloud=cloud, cluster_size=getattr(args, "cluster_size", 2))


def cmd_graph(args) -> int:
    sys.stdout.write(emit_dot(_build(args)))
    return 0


def cmd_plans(args) -> int:
    plans = compile_flow(_build(args))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for loc, plan in plans.items():
            path = out / f"{loc.kind.value}-{loc.index}.plan"
            path.write_text(emit_plan_text(plan))
            print(path)
    else:
        sys.stdout.write("\n".join(emit_plan_text(p) for p in plans.values()))
    return 0


def cmd_deploy_config(args) -> int:
    flow = _build(args, cloud=args.cloud)
    config, _manifest = bind(flow)
    sys.stdout.write(emit_config_text(config))
    return 0


def cmd_run_local(args) -> int:
    flow = _build(args)
    _config, manifest = bind(flow, base_port=args.base_port)
    isolation = args.isolation or ("process" if args.transport == "tcp" else "thread")
    result = run_local_distributed(
        compile_flow(flow), manifest, transport=args.transport, isolation=isolation,
        handshake_timeout=args.handshake_timeout,
    )
    sys.stdout.write(result.dumps())
    return 0


def cmd_oracle(args) -> int:
    result = run_oracle(_build(args), seed=args.seed)
    sys.stdout.write(result.dumps())
    return 0


def cmd_bench_channel(args) -> int:
    report = bench_channel(args.messages, base_port=args.base_port)
    report["threshold"] = args.min_rate
    report["pass"] = report["messages_per_sec"] >= args.min_rate
    print(json.dumps(report))
    return 0 if report["pass"] else 1


def cmd_worker(args) -> int:
    plan = parse_plan_text(Path(args.plan_file).read_text())
    manifest = Manifest.load(args.manifest)
    location = LocationId.parse(args.location)
    if plan.location != location:
        raise FlowError(f"plan is for {plan.location}, not {location}")
    result = run_worker(plan, manifest, args.member, make_transport("tcp"), args.handshake_timeout)
    print(json.dumps({"instance": result.key, "log": result.log, "sent": result.sent,
                      "delivered": result.delivered}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="choreoflow", description="Choreographed streaming dataflow toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("graph", help="print the global dataflow graph as DOT")
    _example_args(p)
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("plans", help="print or write per-location plans")
    _example_args(p)
    p.add_argument("--out", metavar="DIR")
    p.set_defaults(func=cmd_plans)

    p = sub.add_parser("deploy-config", help="print the deployment configuration JSON")
    _example_args(p)
    where = p.add_mutually_exclusive_group()
    where.add_argument("--cloud", action="store_true", help="bind every location to e2-micro cloud machines")
    where.add_argument("--localhost", dest="cloud", action="store_false")
    p.set_defaults(func=cmd_deploy_config)

    p = sub.add_parser("run-local", help="run one worker per location instance")
    _example_args(p)
    p.add_argument("--transport", choices=["mem", "tcp"], default="tcp")
    p.add_argument("--isolation", choices=["thread", "process"], default=None,
                   help="default: process for tcp, thread for mem")
    p.add_argument("--base-port", type=int, default=DEFAULT_BASE_PORT, metavar="P")
    p.add_argument("--handshake-timeout", type=float, default=DEFAULT_HANDSHAKE_TIMEOUT, metavar="SECONDS")
    p.set_defaults(func=cmd_run_local)

    p = sub.add_parser("oracle", help="run the single-process reference interpreter")
    _example_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("bench-channel", help="measure OneToOne TCP throughput")
    p.add_argument("--messages", type=int, default=500_000)
    p.add_argument("--base-port", type=int, default=DEFAULT_BASE_PORT, metavar="P")
    p.add_argument("--min-rate", type=float, default=THROUGHPUT_FLOOR)
    p.set_defaults(func=cmd_bench_channel)

    p = sub.add_parser("worker", help="run one location instance (used by run-local)")
    p.add_argument("plan_file")
    p.add_argument("--manifest", required=True)
    p.add_argument("--location", required=True, metavar="KIND:INDEX")
    p.add_argument("--member", type=int, default=0)
    p.add_argument("--handshake-timeout", type=float, default=DEFAULT_HANDSHAKE_TIMEOUT)
    p.set_defaults(func=cmd_worker)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "cluster_size", 1) < 1 and args.command != "deploy-config":
        parser.error("--cluster-size must be at least 1")
    try:
        return args.func(args)
    except (FlowError, StagingError, DeployError, RuntimeFailure, ValueError, KeyError, OSError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
