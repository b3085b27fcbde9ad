"""Launch one worker per location instance and gather their logs."""

from __future__ import annotations

import json
import os
import subprocess
import sys
import tempfile
import threading
import time
from pathlib import Path

from ..compiler import LocationPlan, emit_plan_text, parse_plan_text
from ..ir import LocationId
from . import errors
from .errors import ChannelClosed, RuntimeFailure, WorkerFailed
from .manifest import Manifest, instance_key
from .result import RunResult
from .transport import make_transport
from .worker import DEFAULT_HANDSHAKE_TIMEOUT, WorkerResult, run_worker

DEFAULT_RUN_TIMEOUT = 120.0


def _plan_texts(plans) -> dict[LocationId, str]:
    texts = {}
    for loc, plan in plans.items():
        texts[loc] = emit_plan_text(plan) if isinstance(plan, LocationPlan) else str(plan)
    return texts


def _collect(manifest: Manifest, results: dict[str, WorkerResult], failures: dict[str, BaseException]) -> RunResult:
    run = RunResult()
    for loc, m in manifest.instances():
        key = instance_key(loc, m)
        res = results.get(key)
        run.logs[key] = res.log if res else []
        run.status[key] = 0 if res else 1
        if res:
            for ch, n in res.sent.items():
                run.channel_stats.setdefault(ch, {"sent": 0, "delivered": 0})["sent"] += n
            for ch, n in res.delivered.items():
                run.channel_stats.setdefault(ch, {"sent": 0, "delivered": 0})["delivered"] += n
    run.channel_stats = dict(sorted(run.channel_stats.items()))
    if failures:
        # Peers of a failed worker see their channels drop; report the original cause.
        ordered = [failures[k] for k in run.logs if k in failures]
        primary = next((e for e in ordered if not isinstance(e, ChannelClosed)), ordered[0])
        primary.run_result = run
        raise primary
    return run


def run_local_distributed(
    plans,
    manifest: Manifest,
    transport="tcp",
    isolation: str = "thread",
    handshake_timeout: float = DEFAULT_HANDSHAKE_TIMEOUT,
    run_timeout: float = DEFAULT_RUN_TIMEOUT,
) -> RunResult:
    """Run each instance in the manifest as an isolated worker.

    ``isolation="thread"`` runs workers as threads of this process;
    ``"process"`` launches one OS process per instance through the
    ``worker`` command (TCP only). Plans always round-trip through their
    text form, so workers execute exactly what was emitted.
    """
    manifest.validate()
    texts = _plan_texts(plans)
    for loc, _m in manifest.instances():
        if loc not in texts:
            raise KeyError(f"no plan for {loc}")
    if isolation == "process":
        if transport not in ("tcp", "tcp-localhost"):
            raise ValueError("process isolation needs the tcp transport")
        return _run_processes(texts, manifest, handshake_timeout, run_timeout)
    if isolation != "thread":
        raise ValueError(f"unknown isolation {isolation!r}")
    return _run_threads(texts, manifest, transport, handshake_timeout, run_timeout)


def _run_threads(texts, manifest, transport, handshake_timeout, run_timeout) -> RunResult:
    tr = make_transport(transport) if isinstance(transport, str) else transport
    parsed = {loc: parse_plan_text(t) for loc, t in texts.items()}
    results: dict[str, WorkerResult] = {}
    failures: dict[str, BaseException] = {}

    def target(loc, member):
        key = instance_key(loc, member)
        try:
            results[key] = run_worker(parsed[loc], manifest, member, tr, handshake_timeout)
        except BaseException as exc:  # noqa: BLE001 - reported to the caller
            failures[key] = exc

    threads = [
        threading.Thread(target=target, args=(loc, m), name=f"worker-{instance_key(loc, m)}", daemon=True)
        for loc, m in manifest.instances()
    ]
    for t in threads:
        t.start()
    deadline = time.monotonic() + run_timeout
    for t in threads:
        t.join(max(0.0, deadline - time.monotonic()))
    for t, (loc, m) in zip(threads, manifest.instances()):
        if t.is_alive():
            failures.setdefault(instance_key(loc, m), RuntimeFailure(f"worker did not finish within {run_timeout}s"))
    return _collect(manifest, results, failures)


def _error_from_stderr(key: str, stderr: str) -> BaseException:
    lines = [ln for ln in stderr.strip().splitlines() if ln.strip()]
    last = lines[-1] if lines else "worker exited abnormally"
    name, _, message = last.partition(": ")
    cls = getattr(errors, name, None)
    if isinstance(cls, type) and issubclass(cls, RuntimeFailure) and cls is not WorkerFailed:
        return cls(f"{key}: {message}")
    return WorkerFailed(key, last)


def _run_processes(texts, manifest, handshake_timeout, run_timeout) -> RunResult:
    src_root = str(Path(__file__).resolve().parents[2])
    env = dict(os.environ)
    env["PYTHONPATH"] = src_root + os.pathsep + env.get("PYTHONPATH", "") if env.get("PYTHONPATH") else src_root
    results: dict[str, WorkerResult] = {}
    failures: dict[str, BaseException] = {}
    with tempfile.TemporaryDirectory(prefix="choreoflow-") as tmp:
        tmpdir = Path(tmp)
        manifest_path = tmpdir / "manifest.json"
        manifest.save(manifest_path)
        plan_paths = {}
        for loc, text in texts.items():
            p = tmpdir / f"{loc.kind.value}-{loc.index}.plan"
            p.write_text(text)
            plan_paths[loc] = p
        procs = []
        for loc, m in manifest.instances():
            cmd = [
                sys.executable, "-m", "choreoflow", "worker", str(plan_paths[loc]),
                "--manifest", str(manifest_path), "--location", str(loc), "--member", str(m),
                "--handshake-timeout", str(handshake_timeout),
            ]
            procs.append((instance_key(loc, m), subprocess.Popen(
                cmd, stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True, env=env,
            )))
        deadline = time.monotonic() + run_timeout
        for key, proc in procs:
            try:
                out, err = proc.communicate(timeout=max(0.1, deadline - time.monotonic()))
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.communicate()
                failures[key] = RuntimeFailure(f"{key}: worker did not finish within {run_timeout}s")
                continue
            if proc.returncode != 0:
                failures[key] = _error_from_stderr(key, err)
                continue
            data = json.loads(out)
            results[key] = WorkerResult(
                key, data["log"],
                {int(k): v for k, v in data["sent"].items()},
                {int(k): v for k, v in data["delivered"].items()},
            )
    return _collect(manifest, results, failures)
