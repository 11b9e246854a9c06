"""Setpoint protocol for the pick-handoff arm, plus a simulated arm.

Wire format is one JSON object per line over TCP.  The client streams
SETPOINT messages one at a time and waits for the matching DONE; the server
splits into a reader and a mover that share a single-slot latest-wins
target, so a fresh setpoint replaces an unfinished one (the replaced seq is
answered with SUPERSEDED, never DONE).  The simulated arm moves the 6-dof
pose vector toward the target in a straight line at constant speed, one
tick at a time.
"""

from __future__ import annotations

import csv
import json
import math
import re
import socket
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from .core import ParseError, SlbError, ValidationError
from .prng import Xoshiro256StarStar

STEP_TYPES = ("approach", "grip_step", "post_pickup", "handoff", "reset")

# one CSV per step type; "start" holds the standardized start pose
STEP_FILES = {
    "start": "start.csv",
    "approach": "approach.csv",
    "grip_step": "grip.csv",
    "post_pickup": "post_pickup.csv",
    "handoff": "handoff.csv",
    "reset": "reset.csv",
}

WAYPOINT_HEADER = ["intention_class", "step_type", "x", "y", "z", "rx", "ry", "rz"]

DEFAULT_TIMEOUT_MS = 10000


class RobotProtocolError(SlbError):
    """The peer broke the message contract."""


class PathConstructionError(SlbError):
    """Waypoint files cannot be assembled into a valid execution path."""


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    z: float
    rx: float
    ry: float
    rz: float

    def __post_init__(self):
        norm = math.sqrt(self.rx**2 + self.ry**2 + self.rz**2)
        if norm > math.pi + 1e-9:
            raise ValidationError(f"rotation vector norm {norm:.6f} exceeds pi")

    def as_vector(self) -> tuple[float, ...]:
        return (self.x, self.y, self.z, self.rx, self.ry, self.rz)

    @classmethod
    def from_vector(cls, vec) -> "Pose":
        if len(vec) != 6:
            raise ValidationError(f"pose vector needs 6 components, got {len(vec)}")
        return cls(*(float(v) for v in vec))

    def distance(self, other: "Pose") -> float:
        return math.sqrt(
            sum((a - b) ** 2 for a, b in zip(self.as_vector(), other.as_vector()))
        )


DEFAULT_START_POSE = Pose(0.0, -0.35, 0.6, 0.0, 1.2, 0.0)


@dataclass(frozen=True)
class Setpoint:
    step_type: str
    pose: Pose
    grip: int

    def __post_init__(self):
        if self.step_type not in STEP_TYPES:
            raise ValidationError(f"unknown step_type {self.step_type!r}")
        if self.grip not in (0, 1):
            raise ValidationError(f"grip must be 0 or 1, got {self.grip}")


_STEP_LETTER = {
    "approach": "a",
    "grip_step": "g",
    "post_pickup": "p",
    "handoff": "h",
    "reset": "r",
}


@dataclass(frozen=True)
class ExecutionPath:
    intention_class: int
    setpoints: tuple[Setpoint, ...]

    def __post_init__(self):
        word = "".join(_STEP_LETTER[sp.step_type] for sp in self.setpoints)
        if not re.fullmatch(r"a+gp*hr", word):
            raise ValidationError(
                f"class {self.intention_class}: step sequence {word!r} does not "
                f"match approach+ grip post_pickup* handoff reset"
            )
        grip_on = False
        for sp in self.setpoints:
            if sp.step_type == "grip_step":
                grip_on = True
            expected = 1 if grip_on else 0
            if sp.grip != expected:
                raise ValidationError(
                    f"class {self.intention_class}: {sp.step_type} has grip "
                    f"{sp.grip}, expected {expected}"
                )
            if sp.step_type == "handoff":
                grip_on = False

    @property
    def reset_pose(self) -> Pose:
        return self.setpoints[-1].pose


def build_path(
    intention_class: int,
    start: Pose,
    approaches: list[Pose],
    grip_pose: Pose,
    post_pickups: list[Pose],
    handoff: Pose,
    reset: Pose,
) -> ExecutionPath:
    """Assemble a path with the grip flag derived from step position.

    The standardized start pose rides along as the first approach step, so
    every path begins by moving the arm to a known posture.
    """
    if not approaches:
        raise PathConstructionError(
            f"class {intention_class}: needs at least one approach waypoint"
        )
    setpoints = [Setpoint("approach", start, 0)]
    setpoints += [Setpoint("approach", p, 0) for p in approaches]
    setpoints.append(Setpoint("grip_step", grip_pose, 1))
    setpoints += [Setpoint("post_pickup", p, 1) for p in post_pickups]
    setpoints.append(Setpoint("handoff", handoff, 1))
    setpoints.append(Setpoint("reset", reset, 0))
    return ExecutionPath(intention_class=intention_class, setpoints=tuple(setpoints))


def record_waypoint(
    pose_source,
    intention_class: int,
    step_type: str,
    directory: str | Path,
) -> Pose:
    """Append the current pose (from pose_source()) to the step's CSV.

    step_type may also be "start" to capture the standardized start pose.
    """
    if step_type not in STEP_FILES:
        raise ValidationError(f"unknown step_type {step_type!r}")
    pose = pose_source()
    if not isinstance(pose, Pose):
        pose = Pose.from_vector(pose)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / STEP_FILES[step_type]
    is_new = not path.exists()
    with open(path, "a", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if is_new:
            writer.writerow(WAYPOINT_HEADER)
        writer.writerow(
            [intention_class, step_type]
            + [f"{v:.12g}" for v in pose.as_vector()]
        )
    return pose


def _read_waypoint_rows(path: Path) -> list[tuple[int, str, Pose]]:
    rows = []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for line_no, row in enumerate(reader, start=1):
            if line_no == 1:
                if row != WAYPOINT_HEADER:
                    raise ParseError(f"{path}:1: bad header {row!r}")
                continue
            if not row:
                continue
            if len(row) != 8:
                raise ParseError(f"{path}:{line_no}: expected 8 columns, got {len(row)}")
            try:
                cls = int(row[0])
                step = row[1]
                pose = Pose.from_vector([float(v) for v in row[2:8]])
            except (ValueError, ValidationError) as exc:
                raise ParseError(f"{path}:{line_no}: {exc}") from exc
            rows.append((cls, step, pose))
    return rows


def load_waypoints(directory: str | Path) -> dict[int, ExecutionPath]:
    """Assemble one ExecutionPath per intention class from the CSV set.

    The start pose is shared: a class uses its own start row when present,
    otherwise the first row of start.csv.  Missing grip, handoff, or reset
    rows fail with the class named; missing whole files list every class
    they affect.
    """
    directory = Path(directory)
    per_step: dict[str, list[tuple[int, Pose]]] = {name: [] for name in STEP_FILES}
    for step_name, file_name in STEP_FILES.items():
        path = directory / file_name
        if not path.exists():
            continue
        for cls, step, pose in _read_waypoint_rows(path):
            if step != step_name:
                raise ParseError(
                    f"{path}: row for class {cls} carries step_type {step!r}, "
                    f"expected {step_name!r}"
                )
            per_step[step_name].append((cls, pose))

    classes = sorted(
        {cls for step in ("approach", "grip_step", "post_pickup", "handoff", "reset")
         for cls, _ in per_step[step] if cls >= 1}
    )
    if not classes:
        raise PathConstructionError(f"{directory}: no waypoint rows found")

    for required, file_name in (("grip_step", "grip.csv"), ("handoff", "handoff.csv"),
                                ("reset", "reset.csv")):
        if not per_step[required]:
            raise PathConstructionError(
                f"{directory}/{file_name} missing; affects classes {classes}"
            )

    starts = per_step["start"]
    if not starts:
        raise PathConstructionError(
            f"{directory}/start.csv missing; affects classes {classes}"
        )
    default_start = starts[0][1]
    start_by_class = {cls: pose for cls, pose in starts}

    paths = {}
    for cls in classes:
        approaches = [p for c, p in per_step["approach"] if c == cls]
        grips = [p for c, p in per_step["grip_step"] if c == cls]
        posts = [p for c, p in per_step["post_pickup"] if c == cls]
        handoffs = [p for c, p in per_step["handoff"] if c == cls]
        resets = [p for c, p in per_step["reset"] if c == cls]
        if not approaches:
            raise PathConstructionError(f"class {cls}: no approach waypoint")
        if len(grips) != 1:
            raise PathConstructionError(
                f"class {cls}: needs exactly one grip waypoint, found {len(grips)}"
            )
        if len(handoffs) != 1:
            raise PathConstructionError(
                f"class {cls}: needs exactly one handoff waypoint, found {len(handoffs)}"
            )
        if len(resets) != 1:
            raise PathConstructionError(
                f"class {cls}: needs exactly one reset waypoint, found {len(resets)}"
            )
        paths[cls] = build_path(
            intention_class=cls,
            start=start_by_class.get(cls, default_start),
            approaches=approaches,
            grip_pose=grips[0],
            post_pickups=posts,
            handoff=handoffs[0],
            reset=resets[0],
        )
    return paths


def simulated_freedrive(
    n_classes: int,
    seed: int,
    jitter_m: float = 0.01,
) -> list[tuple[int, str, Pose]]:
    """Pose feed standing in for hand-guiding the arm during calibration.

    Lays pick poses out along a bench line, one per class, with approach
    and lift poses above them and a shared handoff area.  Gaussian jitter
    models imprecise hand placement; the same seed reproduces the same
    feed.  Classes alternate between one and two approach waypoints and
    between zero and one post-pickup lifts so the resulting paths exercise
    the allowed step patterns.
    """
    if n_classes < 1:
        raise ValidationError(f"n_classes must be >= 1, got {n_classes}")
    rng = Xoshiro256StarStar(seed)

    def jit(x: float, y: float, z: float) -> Pose:
        return Pose(
            x + rng.gauss(0.0, jitter_m),
            y + rng.gauss(0.0, jitter_m),
            z + rng.gauss(0.0, jitter_m),
            0.0,
            1.2,
            rng.gauss(0.0, 0.02),
        )

    rows: list[tuple[int, str, Pose]] = [(0, "start", DEFAULT_START_POSE)]
    for cls in range(1, n_classes + 1):
        frac = (cls - 1) / max(1, n_classes - 1)
        bench_x = -0.6 + 1.2 * frac
        rows.append((cls, "approach", jit(bench_x, -0.55, 0.45)))
        if cls % 2 == 0:
            rows.append((cls, "approach", jit(bench_x, -0.55, 0.3)))
        rows.append((cls, "grip_step", jit(bench_x, -0.55, 0.12)))
        if cls % 2 == 1:
            rows.append((cls, "post_pickup", jit(bench_x, -0.55, 0.42)))
        rows.append((cls, "handoff", jit(0.35, 0.1, 0.45)))
        rows.append((cls, "reset", jit(0.0, -0.35, 0.55)))
    return rows


def synthesize_paths(
    n_classes: int,
    seed: int,
    jitter_m: float = 0.01,
) -> dict[int, ExecutionPath]:
    """Build in-memory paths from the simulated freedrive feed."""
    grouped: dict[int, dict[str, list[Pose]]] = {}
    start = DEFAULT_START_POSE
    for cls, step, pose in simulated_freedrive(n_classes, seed, jitter_m):
        if step == "start":
            start = pose
            continue
        grouped.setdefault(cls, {}).setdefault(step, []).append(pose)
    paths = {}
    for cls, steps in grouped.items():
        paths[cls] = build_path(
            intention_class=cls,
            start=start,
            approaches=steps["approach"],
            grip_pose=steps["grip_step"][0],
            post_pickups=steps.get("post_pickup", []),
            handoff=steps["handoff"][0],
            reset=steps["reset"][0],
        )
    return paths


# ---------------------------------------------------------------------------
# wire protocol


def encode_message(msg: dict) -> bytes:
    return (json.dumps(msg, separators=(",", ":")) + "\n").encode("utf-8")


def decode_message(line: bytes) -> dict:
    try:
        msg = json.loads(line.decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise RobotProtocolError(f"unparseable message: {exc}") from exc
    if not isinstance(msg, dict) or "type" not in msg:
        raise RobotProtocolError("message is not an object with a type")
    return msg


def step_toward(
    current: tuple[float, ...],
    target: tuple[float, ...],
    step_len: float,
) -> tuple[tuple[float, ...], bool]:
    """One constant-speed tick of straight-line motion in pose space."""
    delta = [t - c for c, t in zip(current, target)]
    dist = math.sqrt(sum(d * d for d in delta))
    if dist <= step_len:
        return tuple(target), True
    scale = step_len / dist
    return tuple(c + d * scale for c, d in zip(current, delta)), False


@dataclass(frozen=True)
class SimConfig:
    start_pose: Pose = DEFAULT_START_POSE
    speed: float = 1.0
    tick_ms: int = 8
    realtime: bool = False

    def __post_init__(self):
        if self.speed <= 0:
            raise ValidationError(f"speed must be positive, got {self.speed}")
        if self.tick_ms < 1:
            raise ValidationError(f"tick_ms must be >= 1, got {self.tick_ms}")

    @property
    def step_len(self) -> float:
        return self.speed * self.tick_ms / 1000.0


@dataclass
class RobotState:
    pose: tuple[float, ...]
    gripper_closed: bool = False
    moving: bool = False
    watchdog: bool = False
    last_completed_seq: int | None = None
    sim_time_ms: int = 0


class _Connection:
    """Per-connection shared state between reader and mover threads."""

    def __init__(self, conn: socket.socket):
        self.conn = conn
        self.send_lock = threading.Lock()
        self.stop_event = threading.Event()
        # single-slot latest-wins target cell
        self.lock = threading.Lock()
        self.ready = threading.Condition(self.lock)
        self.active = False
        self.seq: int | None = None
        self.target: tuple[float, ...] | None = None
        self.grip = 0
        self.generation = 0
        # invariant bookkeeping: one terminal (done/superseded/aborted) per seq
        self.terminals: dict[int, str] = {}
        self.reply_log: list[tuple[str, int | None]] = []

    def record_terminal(self, seq: int, kind: str) -> None:
        if seq in self.terminals:
            self.terminals[seq] = f"{self.terminals[seq]}+{kind}"
        else:
            self.terminals[seq] = kind


class RobotServer:
    """Simulated arm behind the setpoint protocol.

    Each connection keeps a per-seq terminal ledger (done / superseded /
    aborted) so tests can assert that no seq ever gets two terminals.
    """

    def __init__(self, host: str = "127.0.0.1", port: int = 0, sim: SimConfig = SimConfig()):
        self.host = host
        self.sim = sim
        self.state = RobotState(pose=sim.start_pose.as_vector())
        self.connections: list[_Connection] = []
        self._state_lock = threading.Lock()
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, port))
        self.port = self._listener.getsockname()[1]
        self._running = False
        self._accept_thread: threading.Thread | None = None

    def start(self) -> None:
        self._listener.listen(4)
        self._running = True
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()

    def stop(self) -> None:
        self._running = False
        try:
            self._listener.close()
        except OSError:
            pass
        for ctx in self.connections:
            ctx.stop_event.set()

    def _accept_loop(self) -> None:
        while self._running:
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return
            ctx = _Connection(conn)
            self.connections.append(ctx)
            threading.Thread(target=self._serve_connection, args=(ctx,), daemon=True).start()

    def _send(self, ctx: _Connection, msg: dict) -> None:
        payload = encode_message(msg)
        with ctx.send_lock:
            ctx.reply_log.append((msg["type"], msg.get("seq")))
            try:
                ctx.conn.sendall(payload)
            except OSError:
                pass

    def _serve_connection(self, ctx: _Connection) -> None:
        mover = threading.Thread(target=self._mover_loop, args=(ctx,), daemon=True)
        mover.start()
        buffer = b""
        try:
            while self._running:
                try:
                    chunk = ctx.conn.recv(4096)
                except OSError:
                    break
                if not chunk:
                    break
                buffer += chunk
                while b"\n" in buffer:
                    line, buffer = buffer.split(b"\n", 1)
                    if line.strip():
                        self._handle_line(ctx, line)
        finally:
            ctx.stop_event.set()
            with ctx.lock:
                ctx.ready.notify_all()
            try:
                ctx.conn.close()
            except OSError:
                pass

    def _handle_line(self, ctx: _Connection, line: bytes) -> None:
        try:
            msg = decode_message(line)
        except RobotProtocolError as exc:
            self._send(ctx, {"type": "ERROR", "detail": str(exc)})
            return
        mtype = msg["type"]
        if mtype == "SETPOINT":
            try:
                seq = int(msg["seq"])
                pose = Pose.from_vector(msg["pose"])
                grip = int(msg["grip"])
                if grip not in (0, 1):
                    raise ValidationError(f"grip must be 0 or 1, got {grip}")
            except (KeyError, TypeError, ValueError, ValidationError) as exc:
                self._send(ctx, {"type": "ERROR", "detail": f"bad SETPOINT: {exc}"})
                return
            with ctx.lock:
                if ctx.active and ctx.seq is not None:
                    ctx.record_terminal(ctx.seq, "superseded")
                    self._send(ctx, {"type": "SUPERSEDED", "seq": ctx.seq})
                ctx.active = True
                ctx.seq = seq
                ctx.target = pose.as_vector()
                ctx.grip = grip
                ctx.generation += 1
                ctx.ready.notify_all()
        elif mtype == "RESET":
            with ctx.lock:
                if ctx.active and ctx.seq is not None:
                    ctx.record_terminal(ctx.seq, "superseded")
                    self._send(ctx, {"type": "SUPERSEDED", "seq": ctx.seq})
                ctx.active = True
                ctx.seq = None
                ctx.target = self.sim.start_pose.as_vector()
                ctx.grip = 1 if self.state.gripper_closed else 0
                ctx.generation += 1
                ctx.ready.notify_all()
        elif mtype == "ABORT":
            with ctx.lock:
                if ctx.active and ctx.seq is not None:
                    ctx.record_terminal(ctx.seq, "aborted")
                ctx.active = False
                ctx.generation += 1
            with self._state_lock:
                self.state.moving = False
        else:
            self._send(ctx, {"type": "ERROR", "detail": f"unknown type {mtype!r}"})

    def _mover_loop(self, ctx: _Connection) -> None:
        step_len = self.sim.step_len
        while not ctx.stop_event.is_set():
            with ctx.lock:
                while not ctx.active and not ctx.stop_event.is_set():
                    ctx.ready.wait(timeout=0.2)
                if ctx.stop_event.is_set():
                    return
                generation = ctx.generation
                seq = ctx.seq
                target = ctx.target
                grip = ctx.grip
            while not ctx.stop_event.is_set():
                if self.sim.realtime:
                    time.sleep(self.sim.tick_ms / 1000.0)
                with ctx.lock:
                    if not ctx.active or ctx.generation != generation:
                        break  # superseded or aborted; newest target wins
                    with self._state_lock:
                        new_pose, arrived = step_toward(self.state.pose, target, step_len)
                        self.state.pose = new_pose
                        self.state.moving = not arrived
                        self.state.sim_time_ms += self.sim.tick_ms
                        if arrived:
                            self.state.gripper_closed = bool(grip)
                            self.state.watchdog = not self.state.watchdog
                            if seq is not None:
                                self.state.last_completed_seq = seq
                    if arrived:
                        ctx.active = False
                        if seq is not None:
                            ctx.record_terminal(seq, "done")
                            self._send(ctx, {"type": "DONE", "seq": seq})
                        break


@dataclass
class LogEntry:
    seq: int
    step_type: str
    send_t_ms: float
    done_t_ms: float


@dataclass
class ExecutionLog:
    intention_class: int
    entries: list[LogEntry] = field(default_factory=list)
    status: str = "ok"
    detail: str = ""


class RobotClient:
    """Strictly sequential client: one setpoint in flight, ever."""

    def __init__(self, host: str, port: int, timeout_ms: int = DEFAULT_TIMEOUT_MS):
        self.timeout_ms = timeout_ms
        self._sock = socket.create_connection((host, port))
        self._buffer = b""
        self._next_seq = 1

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass

    def _read_line(self, deadline: float) -> bytes | None:
        """One newline-terminated message, or None on deadline."""
        while b"\n" not in self._buffer:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                return None
            self._sock.settimeout(remaining)
            try:
                chunk = self._sock.recv(4096)
            except socket.timeout:
                return None
            except OSError as exc:
                raise RobotProtocolError(f"connection failed: {exc}") from exc
            if not chunk:
                raise RobotProtocolError("connection closed by server")
            self._buffer += chunk
        line, self._buffer = self._buffer.split(b"\n", 1)
        return line

    def send_reset(self) -> None:
        self._sock.sendall(encode_message({"type": "RESET"}))

    def execute(self, path: ExecutionPath, timeout_ms: int | None = None) -> ExecutionLog:
        """Run a path setpoint by setpoint; abort on timeout.

        Every reply is checked against the one outstanding seq.  A stale,
        duplicated, or otherwise unexpected reply fails the log with
        status "protocol_error" instead of being ignored.
        """
        timeout = (timeout_ms if timeout_ms is not None else self.timeout_ms) / 1000.0
        log = ExecutionLog(intention_class=path.intention_class)
        for sp in path.setpoints:
            seq = self._next_seq
            self._next_seq += 1
            msg = {
                "type": "SETPOINT",
                "seq": seq,
                "pose": list(sp.pose.as_vector()),
                "grip": sp.grip,
            }
            send_t = time.monotonic() * 1000.0
            try:
                self._sock.sendall(encode_message(msg))
            except OSError as exc:
                log.status = "protocol_error"
                log.detail = f"send failed: {exc}"
                return log
            deadline = time.monotonic() + timeout
            while True:
                try:
                    line = self._read_line(deadline)
                except RobotProtocolError as exc:
                    log.status = "protocol_error"
                    log.detail = str(exc)
                    return log
                if line is None:
                    try:
                        self._sock.sendall(encode_message({"type": "ABORT"}))
                    except OSError:
                        pass
                    log.status = "aborted"
                    log.detail = f"timeout waiting for DONE seq={seq}"
                    return log
                try:
                    reply = decode_message(line)
                except RobotProtocolError as exc:
                    log.status = "protocol_error"
                    log.detail = str(exc)
                    return log
                rtype = reply.get("type")
                rseq = reply.get("seq")
                if rtype == "DONE" and rseq == seq:
                    log.entries.append(
                        LogEntry(
                            seq=seq,
                            step_type=sp.step_type,
                            send_t_ms=send_t,
                            done_t_ms=time.monotonic() * 1000.0,
                        )
                    )
                    break
                log.status = "protocol_error"
                log.detail = f"expected DONE seq={seq}, got {rtype} seq={rseq}"
                return log
        return log


# ---------------------------------------------------------------------------
# fault injection for protocol robustness tests


@dataclass(frozen=True)
class FaultConfig:
    seed: int = 0
    p_delay: float = 0.0
    max_delay_ms: int = 0
    p_duplicate: float = 0.0
    p_reorder: float = 0.0


class FaultProxy:
    """TCP proxy that mangles server-to-client replies.

    Client-to-server traffic passes through untouched; replies may be
    delayed, duplicated, or held back one message, according to FaultConfig
    probabilities drawn from the portable generator.
    """

    def __init__(self, upstream_host: str, upstream_port: int, faults: FaultConfig):
        self.upstream = (upstream_host, upstream_port)
        self.faults = faults
        self._rng = Xoshiro256StarStar(faults.seed)
        self._rng_lock = threading.Lock()
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind(("127.0.0.1", 0))
        self.port = self._listener.getsockname()[1]
        self._running = False

    def start(self) -> None:
        self._listener.listen(4)
        self._running = True
        threading.Thread(target=self._accept_loop, daemon=True).start()

    def stop(self) -> None:
        self._running = False
        try:
            self._listener.close()
        except OSError:
            pass

    def _accept_loop(self) -> None:
        while self._running:
            try:
                client, _ = self._listener.accept()
            except OSError:
                return
            try:
                server = socket.create_connection(self.upstream)
            except OSError:
                client.close()
                continue
            threading.Thread(
                target=self._pump_raw, args=(client, server), daemon=True
            ).start()
            threading.Thread(
                target=self._pump_faulty, args=(server, client), daemon=True
            ).start()

    def _pump_raw(self, src: socket.socket, dst: socket.socket) -> None:
        try:
            while True:
                chunk = src.recv(4096)
                if not chunk:
                    break
                dst.sendall(chunk)
        except OSError:
            pass
        finally:
            for s in (src, dst):
                try:
                    s.shutdown(socket.SHUT_RDWR)
                except OSError:
                    pass

    def _roll(self, p: float) -> bool:
        if p <= 0:
            return False
        with self._rng_lock:
            return self._rng.random() < p

    def _delay_ms(self) -> int:
        with self._rng_lock:
            return self._rng.randint(0, self.faults.max_delay_ms)

    def _pump_faulty(self, src: socket.socket, dst: socket.socket) -> None:
        buffer = b""
        held: bytes | None = None
        try:
            while True:
                chunk = src.recv(4096)
                if not chunk:
                    break
                buffer += chunk
                while b"\n" in buffer:
                    line, buffer = buffer.split(b"\n", 1)
                    out = line + b"\n"
                    if self._roll(self.faults.p_delay):
                        time.sleep(self._delay_ms() / 1000.0)
                    if held is None and self._roll(self.faults.p_reorder):
                        held = out
                        continue
                    dst.sendall(out)
                    if self._roll(self.faults.p_duplicate):
                        dst.sendall(out)
                    if held is not None:
                        dst.sendall(held)
                        held = None
        except OSError:
            pass
        finally:
            if held is not None:
                try:
                    dst.sendall(held)
                except OSError:
                    pass
            for s in (src, dst):
                try:
                    s.shutdown(socket.SHUT_RDWR)
                except OSError:
                    pass
