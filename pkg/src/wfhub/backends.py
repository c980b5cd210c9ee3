"""Execution backends that drive the start/status/stop hooks of a service.

Status hook exit codes::

    0  still running
    1  finished
    2  failed
    3  unknown (the orchestrator keeps polling)
"""

from __future__ import annotations

import os
import subprocess
from dataclasses import dataclass
from pathlib import Path

from .errors import ContractError

RUNNING, FINISHED, FAILED, UNKNOWN = 0, 1, 2, 3
STATUS_CODES = (RUNNING, FINISHED, FAILED, UNKNOWN)


@dataclass
class HookResult:
    returncode: int
    stdout: str = ""
    stderr: str = ""


def run_hook(work_dir: str | os.PathLike, hook: str, *, timeout: float = 600, inprocess: bool = True) -> HookResult:
    """Run ``./<hook>`` inside ``work_dir``.

    Synthetic services (marked by ``synthetic.json``) are executed in-process
    when ``inprocess`` is set; the code path is the same module their hook
    scripts run, so outputs are identical either way.
    """
    work_dir = Path(work_dir)
    path = work_dir / hook
    if not path.is_file():
        raise ContractError(f"{hook} missing")
    if inprocess and (work_dir / "synthetic.json").is_file():
        from .sim import hook as synthetic_hook

        code = synthetic_hook.main(hook, work_dir)
        result = HookResult(code)
    else:
        try:
            proc = subprocess.run(
                [str(path.resolve())],
                cwd=work_dir,
                capture_output=True,
                text=True,
                timeout=timeout,
            )
        except subprocess.TimeoutExpired:
            return HookResult(UNKNOWN, "", f"{hook} timed out")
        except OSError as exc:
            raise ContractError(f"{hook} could not be executed: {exc}") from exc
        result = HookResult(proc.returncode, proc.stdout, proc.stderr)
        with open(work_dir / f"{hook}.log", "a") as fh:
            fh.write(proc.stdout)
        with open(work_dir / f"{hook}.err", "a") as fh:
            fh.write(proc.stderr)
    return result


def read_jobid(work_dir: Path, fallback: str) -> str:
    try:
        text = (work_dir / "jobid").read_text().strip()
    except FileNotFoundError:
        return fallback
    return text or fallback


class LocalBackend:
    """Runs hooks directly on this host."""

    kind = "local"

    def __init__(self, inprocess: bool = True, timeout: float = 600):
        self.inprocess = inprocess
        self.timeout = timeout
        self.queue_length = 0

    def probe(self) -> bool:
        return True

    def start(self, task_id: str, work_dir: Path, now: int) -> str:
        result = run_hook(work_dir, "start", timeout=self.timeout, inprocess=self.inprocess)
        if result.returncode != 0:
            raise ContractError(f"start exited {result.returncode}: {result.stderr.strip()[-200:]}")
        return read_jobid(work_dir, f"local-{task_id}")

    def status(self, task_id: str, work_dir: Path, now: int) -> int:
        code = run_hook(work_dir, "status", timeout=self.timeout, inprocess=self.inprocess).returncode
        return code if code in STATUS_CODES else UNKNOWN

    def stop(self, task_id: str, work_dir: Path, now: int) -> None:
        run_hook(work_dir, "stop", timeout=self.timeout, inprocess=self.inprocess)


def make_backend(spec: dict | None):
    spec = dict(spec or {"type": "local"})
    kind = spec.pop("type", "local")
    if kind == "local":
        return LocalBackend(**spec)
    if kind == "sim":
        from .sim.backend import SimBackend, SimProfile

        return SimBackend(SimProfile(**spec))
    raise ValueError(f"unknown backend type {kind!r}")
