"""Sandboxed process runner for generated tool code.

Each run materializes its files into a fresh scratch directory, executes the
entry command in its own process group, and kills the whole group on
timeout so no children survive the call. Output streams are capped.
"""
from __future__ import annotations

import logging
import os
import shutil
import signal
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path, PurePosixPath
from typing import Mapping

from ..errors import RuntimeUnavailable, SandboxError, SpawnFailure

logger = logging.getLogger(__name__)

DEFAULT_OUTPUT_CAP_BYTES = 256 * 1024
KILL_GRACE_S = 2.0


def default_runtimes() -> dict[str, list[str]]:
    """Interpreter tag -> argv prefix. Other runtimes plug in as data."""
    return {"python3": [sys.executable]}


SUPPORTED_RESOURCE_HINTS = ("cpu_seconds", "memory_bytes", "file_size_bytes")


@dataclass(frozen=True)
class SandboxRequest:
    files: Mapping[str, str]
    entry: tuple[str, ...]
    stdin_doc: str = ""
    timeout_s: float = 20.0
    env: Mapping[str, str] = field(default_factory=dict)
    # Optional rlimit hints: cpu_seconds, memory_bytes, file_size_bytes.
    resource_hints: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.timeout_s <= 0:
            raise SandboxError(f"timeout must be positive, got {self.timeout_s}")
        for hint, value in self.resource_hints.items():
            if hint not in SUPPORTED_RESOURCE_HINTS:
                raise SandboxError(f"unknown resource hint {hint!r}; supported: {SUPPORTED_RESOURCE_HINTS}")
            if int(value) <= 0:
                raise SandboxError(f"resource hint {hint!r} must be positive, got {value!r}")
        for path in self.files:
            _check_relative(path)


@dataclass(frozen=True)
class SandboxResult:
    exit_code: int | None
    stdout: str
    stderr: str
    duration_s: float
    timed_out: bool

    @property
    def ok(self) -> bool:
        return self.exit_code == 0 and not self.timed_out


def _check_relative(path: str) -> None:
    pure = PurePosixPath(path)
    if pure.is_absolute() or path.startswith(("/", "\\")) or (len(path) > 1 and path[1] == ":"):
        raise SandboxError(f"sandbox file path must be relative: {path!r}")
    if ".." in pure.parts:
        raise SandboxError(f"sandbox file path must not traverse upward: {path!r}")


def _cap(text: bytes, cap: int) -> str:
    if len(text) <= cap:
        return text.decode("utf-8", errors="replace")
    return text[:cap].decode("utf-8", errors="replace") + f"\n...[output capped at {cap} bytes]"


class SandboxRunner:
    """Runs sandbox requests against a registry of interpreter runtimes."""

    def __init__(
        self,
        runtimes: Mapping[str, list[str]] | None = None,
        output_cap_bytes: int = DEFAULT_OUTPUT_CAP_BYTES,
        scratch_root: str | Path | None = None,
    ) -> None:
        self.runtimes = dict(runtimes if runtimes is not None else default_runtimes())
        self.output_cap_bytes = output_cap_bytes
        self.scratch_root = Path(scratch_root) if scratch_root else None

    def runtime_argv(self, tag: str) -> list[str]:
        try:
            return list(self.runtimes[tag])
        except KeyError:
            raise RuntimeUnavailable(tag) from None

    def run(self, request: SandboxRequest) -> SandboxResult:
        scratch = Path(tempfile.mkdtemp(prefix="coevo-sbx-", dir=self.scratch_root))
        try:
            for rel_path, content in request.files.items():
                target = scratch / rel_path
                target.parent.mkdir(parents=True, exist_ok=True)
                target.write_text(content, encoding="utf-8")

            env = {
                "PATH": os.environ.get("PATH", ""),
                "LANG": "C.UTF-8",
                **request.env,
            }
            started = time.monotonic()
            try:
                proc = subprocess.Popen(
                    list(request.entry),
                    cwd=scratch,
                    stdin=subprocess.PIPE,
                    stdout=subprocess.PIPE,
                    stderr=subprocess.PIPE,
                    env=env,
                    start_new_session=True,
                    preexec_fn=_limit_fn(request.resource_hints),
                )
            except OSError as exc:
                raise SpawnFailure(f"could not spawn {request.entry[0]!r}: {exc}") from exc

            timed_out = False
            try:
                stdout, stderr = proc.communicate(
                    input=request.stdin_doc.encode("utf-8"),
                    timeout=request.timeout_s,
                )
            except subprocess.TimeoutExpired:
                timed_out = True
                _kill_process_group(proc)
                stdout, stderr = proc.communicate()
            duration = time.monotonic() - started
            return SandboxResult(
                exit_code=None if timed_out else proc.returncode,
                stdout=_cap(stdout, self.output_cap_bytes),
                stderr=_cap(stderr, self.output_cap_bytes),
                duration_s=duration,
                timed_out=timed_out,
            )
        finally:
            shutil.rmtree(scratch, ignore_errors=True)


def _limit_fn(hints: Mapping[str, int]):
    """Build the child-side rlimit installer; None when no hints are set."""
    if not hints:
        return None

    def apply_limits() -> None:
        import resource

        if "cpu_seconds" in hints:
            seconds = int(hints["cpu_seconds"])
            resource.setrlimit(resource.RLIMIT_CPU, (seconds, seconds))
        if "memory_bytes" in hints:
            limit = int(hints["memory_bytes"])
            resource.setrlimit(resource.RLIMIT_AS, (limit, limit))
        if "file_size_bytes" in hints:
            limit = int(hints["file_size_bytes"])
            resource.setrlimit(resource.RLIMIT_FSIZE, (limit, limit))

    return apply_limits


def _kill_process_group(proc: subprocess.Popen) -> None:
    try:
        pgid = os.getpgid(proc.pid)
    except ProcessLookupError:
        return
    try:
        os.killpg(pgid, signal.SIGKILL)
    except ProcessLookupError:
        return
    deadline = time.monotonic() + KILL_GRACE_S
    while time.monotonic() < deadline:
        try:
            proc.wait(timeout=0.05)
            return
        except subprocess.TimeoutExpired:
            continue


def process_group_alive(pid: int) -> bool:
    """True if any process from the group of `pid` still exists (test helper)."""
    try:
        os.killpg(pid, 0)
        return True
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
