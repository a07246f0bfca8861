"""Uniform simulator abstraction: in-process models and external processes.

External simulators speak a newline-terminated ASCII protocol on their
standard streams: `reset <uint64>`, `next`, or a bare observable name.
The only responses are `OUTPUTMV:<real>` lines answering observable
requests; reset and next are ack-free.
"""

from __future__ import annotations

import logging
import re
import selectors
import subprocess
import time
from dataclasses import dataclass, field

log = logging.getLogger(__name__)

_RESPONSE_RE = re.compile(r"^OUTPUTMV:([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)$")


class SimulatorError(Exception):
    """Simulator failed or the protocol was violated."""


class ProtocolMisuse(SimulatorError):
    """Operation called in an illegal handle state."""


class UnknownObservable(SimulatorError):
    """Observable not in the declared list; nothing was written to the wire."""


def parse_response(line: str) -> float:
    """Parse one `OUTPUTMV:<real>` response line."""
    m = _RESPONSE_RE.match(line.strip())
    if m is None:
        raise SimulatorError(f"malformed response line: {line!r}")
    return float(m.group(1))


@dataclass(frozen=True)
class LaunchSpec:
    command: tuple[str, ...]
    experiment_id: int | None = None
    param_index: int | None = None
    startup_timeout: float = 10.0
    response_timeout: float = 30.0

    def __post_init__(self) -> None:
        if not self.command:
            raise ValueError("command must be non-empty")
        if self.startup_timeout <= 0 or self.response_timeout <= 0:
            raise ValueError("timeouts must be positive")

    def argv(self) -> list[str]:
        argv = list(self.command)
        if self.experiment_id is not None:
            argv += ["-experimentMV", str(self.experiment_id)]
        if self.param_index is not None:
            argv += ["-numMCexpMV", str(self.param_index)]
        return argv


class InProcessSimulator:
    """Base for built-in models; subclasses implement the step dynamics."""

    def __init__(self) -> None:
        self.step = 0  # 0 = idle; reset establishes step 1

    def reset(self, seed: int) -> None:
        self.step = 1
        self._reinit(seed)
        self._step_once()

    def advance(self) -> None:
        if self.step == 0:
            raise ProtocolMisuse("advance called on an idle simulator")
        self.step += 1
        self._step_once()

    def observe(self, name: str) -> float:
        if self.step == 0:
            raise ProtocolMisuse("observe called on an idle simulator")
        value = self._observe(name)
        if value is None:
            log.warning("unknown observable %r, returning sentinel -1", name)
            return -1.0
        return value

    def close(self) -> None:
        pass

    def _reinit(self, seed: int) -> None:
        raise NotImplementedError

    def _step_once(self) -> None:
        raise NotImplementedError

    def _observe(self, name: str) -> float | None:
        raise NotImplementedError


class ExternalSimulator:
    """Child process driven over the line protocol.

    `next` and `reset` writes are buffered and flushed lazily; observe
    calls are the protocol's only synchronization points.
    """

    def __init__(self, spec: LaunchSpec, declared: set[str] | None = None):
        self.spec = spec
        self.declared = declared
        self.step = 0
        self.failed = False
        try:
            self.proc = subprocess.Popen(
                spec.argv(),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise SimulatorError(f"failed to spawn {spec.command[0]!r}: {exc}") from exc
        self._pending: list[str] = []
        deadline = time.monotonic() + spec.startup_timeout
        while time.monotonic() < deadline:
            if self.proc.poll() is None:
                break
            time.sleep(0.01)
        if self.proc.poll() is not None:
            raise SimulatorError(
                f"simulator {spec.command[0]!r} exited at startup "
                f"with code {self.proc.returncode}"
            )

    def _send(self, line: str) -> None:
        self._pending.append(line)

    def _flush(self) -> None:
        if not self._pending:
            return
        data = "".join(f"{line}\n" for line in self._pending)
        self._pending.clear()
        try:
            self.proc.stdin.write(data)
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            self.failed = True
            raise SimulatorError(f"broken pipe to simulator: {exc}") from exc

    def reset(self, seed: int) -> None:
        if self.failed:
            raise ProtocolMisuse("reset called on a failed handle")
        if not 0 <= seed < 2**64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self._send(f"reset {seed}")
        self.step = 1

    def advance(self) -> None:
        if self.failed:
            raise ProtocolMisuse("advance called on a failed handle")
        if self.step == 0:
            raise ProtocolMisuse("advance called before reset")
        self._send("next")
        self.step += 1

    def observe(self, name: str) -> float:
        if self.failed:
            raise ProtocolMisuse("observe called on a failed handle")
        if self.step == 0:
            raise ProtocolMisuse("observe called before reset")
        if name == "steps":
            raise ProtocolMisuse('"steps" is answered by the engine, not the simulator')
        if self.declared is not None and name not in self.declared:
            raise UnknownObservable(f"observable {name!r} is not declared")
        self._send(name)
        self._flush()
        line = self._read_line()
        value = parse_response(line)
        if value == -1.0:
            log.warning("simulator returned sentinel -1 for observable %r", name)
        return value

    def _read_line(self) -> str:
        sel = selectors.DefaultSelector()
        sel.register(self.proc.stdout, selectors.EVENT_READ)
        try:
            events = sel.select(timeout=self.spec.response_timeout)
        finally:
            sel.close()
        if not events:
            self.failed = True
            raise SimulatorError(
                f"simulator response timeout after {self.spec.response_timeout}s"
            )
        line = self.proc.stdout.readline()
        if line == "":
            self.failed = True
            raise SimulatorError("simulator closed its output stream")
        return line

    def close(self) -> None:
        try:
            if self.proc.stdin and not self.proc.stdin.closed:
                self.proc.stdin.close()
            self.proc.wait(timeout=5)
        except (OSError, subprocess.TimeoutExpired):
            self.proc.kill()
            self.proc.wait()


def spawn_external(spec: LaunchSpec, declared: set[str] | None = None) -> ExternalSimulator:
    return ExternalSimulator(spec, declared=declared)


def protocol_check(command: tuple[str, ...], timeout: float = 10.0) -> list[tuple[str, bool, str]]:
    """Run a conformance transcript against an external simulator.

    Returns (check name, passed, detail) triples covering reset/next
    ordering, response framing, the -1 sentinel, per-seed determinism,
    and clean shutdown at EOF.
    """
    checks: list[tuple[str, bool, str]] = []

    def session(requests: list[str]) -> tuple[list[str], int]:
        proc = subprocess.Popen(
            list(command),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
        )
        try:
            out, _ = proc.communicate("".join(f"{r}\n" for r in requests), timeout=timeout)
        except subprocess.TimeoutExpired:
            proc.kill()
            raise SimulatorError("simulator did not exit at EOF")
        return out.splitlines(), proc.returncode

    try:
        lines, rc = session(["reset 7", "next", "X"])
        ok = len(lines) == 1 and _RESPONSE_RE.match(lines[0]) is not None
        checks.append(
            ("reset/next are ack-free; observe answers once", ok, "; ".join(lines) or "(no output)")
        )
        checks.append(("clean exit at EOF", rc == 0, f"exit code {rc}"))

        lines, _ = session(["reset 7", "BOGUS"])
        ok = lines == ["OUTPUTMV:-1"]
        checks.append(("unknown observable answers the -1 sentinel", ok, "; ".join(lines)))

        requests = ["reset 7"] + ["next", "X"] * 5
        first, _ = session(requests)
        second, _ = session(requests)
        ok = first == second and len(first) == 5
        checks.append(("identical transcripts for a repeated seed", ok, "; ".join(first)))

        lines, _ = session(["reset 7", "X", "next", "X"])
        ok = len(lines) == 2 and all(_RESPONSE_RE.match(l) for l in lines)
        checks.append(("every response line is OUTPUTMV-framed", ok, "; ".join(lines)))

        lines, _ = session(["reset notanumber", "X"])
        ok = len(lines) == 2 and lines[0] == "OUTPUTMV:-1"
        checks.append(("malformed reset seed does not crash the loop", ok, "; ".join(lines)))
    except (OSError, SimulatorError) as exc:
        checks.append(("simulator reachable", False, str(exc)))
    return checks
