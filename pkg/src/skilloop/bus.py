"""Chat-style interconnect: a broker fans plans out to workers over TCP.

One JSON record per line is the whole wire format (see docs/protocol.md).
The broker accepts worker JOINs, broadcasts each plan exactly once to every
joined worker, and funnels back per-repetition episode reports, deduplicating
retries and shrinking the expected count when a worker drops mid-plan. Flow
control is deliberately serial: one plan is in flight fleet-wide at a time.

Workers execute plans open-loop (each caption runs for a fixed number of
steps), judge the outcome, persist the episode to their own shard, and report
success plus the segment-final reward per skill so the collector can re-audit
the judgment.
"""

from __future__ import annotations

import hashlib
import json
import socket
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from . import rewards as reward_lib
from . import world as world_lib
from .curriculum import Plan
from .learner import QPolicy, rollout_plan
from .store import EpisodeStore

__all__ = [
    "Broker",
    "BusMessage",
    "CollectResult",
    "MESSAGE_TYPES",
    "PROTOCOL_VERSION",
    "Report",
    "episode_seed",
    "worker_run",
]

PROTOCOL_VERSION = 1
MESSAGE_TYPES = ("JOIN", "PLAN", "EPISODE_REPORT", "FRAME", "STATUS")


def episode_seed(plan_id: int, worker_id: str, repetition: int) -> int:
    """World seed for one rollout, stable across runs and hosts.

    Hashing keeps distinct (plan, worker, repetition) triples from colliding
    the way additive schemes do, so every rollout in a fleet sees a fresh
    reset.
    """
    digest = hashlib.sha256(f"{plan_id}|{worker_id}|{repetition}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass(frozen=True)
class BusMessage:
    type: str
    sender: str
    plan_id: int | None = None
    payload: Mapping = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.type not in MESSAGE_TYPES:
            raise ValueError(f"unknown message type {self.type!r}")

    def to_line(self) -> bytes:
        record = {"type": self.type, "sender": self.sender, "payload": dict(self.payload)}
        if self.plan_id is not None:
            record["plan_id"] = self.plan_id
        return (json.dumps(record, sort_keys=True) + "\n").encode("utf-8")

    @classmethod
    def from_line(cls, line: str | bytes) -> "BusMessage":
        record = json.loads(line)
        return cls(
            type=record["type"],
            sender=record["sender"],
            plan_id=record.get("plan_id"),
            payload=record.get("payload", {}),
        )


@dataclass(frozen=True)
class Report:
    """One worker's outcome for one repetition of a plan."""

    plan_id: int
    worker: str
    repetition: int
    success: bool
    finals: Mapping[str, float]
    episode_ref: str
    error: str = ""

    @classmethod
    def from_message(cls, message: BusMessage) -> "Report":
        p = message.payload
        return cls(
            plan_id=int(message.plan_id),
            worker=str(p["worker"]),
            repetition=int(p["repetition"]),
            success=bool(p["success"]),
            finals=dict(p.get("finals", {})),
            episode_ref=str(p.get("episode_ref", "")),
            error=str(p.get("error", "")),
        )


@dataclass
class CollectResult:
    reports: list[Report]
    timed_out: bool

    def __iter__(self):
        return iter(self.reports)

    def __len__(self) -> int:
        return len(self.reports)


def _send(sock: socket.socket, message: BusMessage) -> None:
    sock.sendall(message.to_line())


class Broker:
    """Fan-out hub: workers join, plans broadcast, reports funnel back.

    All state is guarded by one condition variable; per-connection reader
    threads only ever touch it under the lock, so aggregation order cannot
    leak into results.
    """

    def __init__(self, host: str = "127.0.0.1", port: int = 0):
        self._listener = socket.create_server((host, port))
        self.host, self.port = self._listener.getsockname()
        self._cond = threading.Condition()
        self._workers: dict[str, socket.socket] = {}
        self._reports: dict[int, dict[tuple[str, int], Report]] = {}
        self._expected: dict[int, int] = {}
        self._repetitions: dict[int, int] = {}
        self._reported_by: dict[int, dict[str, int]] = {}
        self._inflight: int | None = None
        self._next_plan_id = 0
        self.events: list[dict] = []
        self.frames: dict[str, Mapping] = {}
        self._closing = False
        self._threads: list[threading.Thread] = []
        self._accept_thread: threading.Thread | None = None

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> "Broker":
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()
        return self

    def stop(self) -> None:
        with self._cond:
            self._closing = True
            sockets = list(self._workers.values())
            self._workers.clear()
            self._cond.notify_all()
        for sock in sockets:
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            sock.close()
        self._listener.close()
        for thread in self._threads:
            thread.join(timeout=2)

    def __enter__(self) -> "Broker":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    @property
    def endpoint(self) -> tuple[str, int]:
        return (self.host, self.port)

    def worker_count(self) -> int:
        with self._cond:
            return len(self._workers)

    def wait_for_workers(self, count: int, timeout: float = 10.0) -> bool:
        with self._cond:
            return self._cond.wait_for(lambda: len(self._workers) >= count, timeout)

    # -- connection handling -------------------------------------------------

    def _accept_loop(self) -> None:
        while True:
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return  # listener closed
            thread = threading.Thread(target=self._serve_connection, args=(conn,), daemon=True)
            self._threads.append(thread)
            thread.start()

    def _serve_connection(self, conn: socket.socket) -> None:
        sender = None
        try:
            with conn.makefile("r", encoding="utf-8") as lines:
                for line in lines:
                    if not line.strip():
                        continue
                    message = BusMessage.from_line(line)
                    if message.type == "JOIN":
                        sender = self._handle_join(message, conn)
                    elif message.type == "EPISODE_REPORT":
                        self._handle_report(message)
                    elif message.type == "FRAME":
                        with self._cond:
                            self.frames[message.sender] = dict(message.payload)
                    elif message.type == "STATUS":
                        with self._cond:
                            self.events.append(
                                {"event": "worker-status", "worker": message.sender,
                                 **dict(message.payload)}
                            )
        except (OSError, ValueError, json.JSONDecodeError):
            pass
        finally:
            self._handle_disconnect(sender)
            conn.close()

    def _handle_join(self, message: BusMessage, conn: socket.socket) -> str:
        version = int(message.payload.get("version", -1))
        if version != PROTOCOL_VERSION:
            _send(conn, BusMessage("STATUS", "broker",
                                   payload={"event": "rejected", "reason": "version"}))
            raise ValueError("protocol version mismatch")
        # ack before registering: once registered, a broadcast may write PLAN
        # from another thread, and the ack must precede it on the stream
        _send(conn, BusMessage("JOIN", "broker", payload={"ack": True, "version": PROTOCOL_VERSION}))
        with self._cond:
            self._workers[message.sender] = conn
            self.events.append({"event": "join", "worker": message.sender})
            self._cond.notify_all()
        return message.sender

    def _handle_report(self, message: BusMessage) -> None:
        report = Report.from_message(message)
        with self._cond:
            if report.plan_id not in self._expected:
                self.events.append({"event": "invalid-report", "worker": report.worker,
                                    "reason": "unknown plan", "plan_id": report.plan_id})
                return
            if not 0 <= report.repetition < self._repetitions[report.plan_id]:
                self.events.append({"event": "invalid-report", "worker": report.worker,
                                    "reason": "repetition out of range",
                                    "plan_id": report.plan_id})
                return
            key = (report.worker, report.repetition)
            bucket = self._reports[report.plan_id]
            if key in bucket:  # worker retry; first result stands
                return
            bucket[key] = report
            self._reported_by[report.plan_id][report.worker] = (
                self._reported_by[report.plan_id].get(report.worker, 0) + 1
            )
            self._cond.notify_all()

    def _handle_disconnect(self, sender: str | None) -> None:
        if sender is None:
            return
        with self._cond:
            if self._workers.pop(sender, None) is None:
                return  # already removed by stop()
            if self._inflight is not None:
                outstanding = self._repetitions[self._inflight] - \
                    self._reported_by[self._inflight].get(sender, 0)
                if outstanding > 0:
                    self._expected[self._inflight] -= outstanding
                self.events.append({"event": "disconnect", "worker": sender,
                                    "outstanding": max(outstanding, 0)})
            else:
                self.events.append({"event": "disconnect", "worker": sender, "outstanding": 0})
            self._cond.notify_all()

    # -- curriculum-facing operations ----------------------------------------

    def broadcast_plan(
        self,
        plan: Plan,
        repetitions: int = 5,
        segment_steps: int = 50,
    ) -> int:
        if plan.discarded:
            raise ValueError(f"plan {plan.plan_id} was discarded: {plan.discard_reason}")
        with self._cond:
            if self._inflight is not None:
                raise RuntimeError(
                    f"plan {self._inflight} still in flight; collect its reports first"
                )
            if not self._workers:
                raise RuntimeError("no workers joined")
            plan_id = self._next_plan_id
            self._next_plan_id += 1
            self._expected[plan_id] = len(self._workers) * repetitions
            self._repetitions[plan_id] = repetitions
            self._reports[plan_id] = {}
            self._reported_by[plan_id] = {}
            self._inflight = plan_id
            message = BusMessage(
                "PLAN", "broker", plan_id=plan_id,
                payload={"plan": plan.to_dict(), "repetitions": repetitions,
                         "segment_steps": segment_steps},
            )
            for sock in self._workers.values():
                _send(sock, message)
        return plan_id

    def collect_reports(
        self,
        plan_id: int,
        expected: int | None = None,
        timeout: float | None = None,
    ) -> CollectResult:
        """Block until every expected report arrives or the timeout lapses.

        The expected count self-adjusts downward as workers disconnect;
        a timeout returns whatever arrived, flagged.
        """
        with self._cond:
            if plan_id not in self._reports:
                raise KeyError(f"plan {plan_id} was never broadcast")

            def ready() -> bool:
                goal = self._expected[plan_id] if expected is None else expected
                return len(self._reports[plan_id]) >= goal

            complete = self._cond.wait_for(ready, timeout)
            reports = sorted(
                self._reports[plan_id].values(),
                key=lambda r: (r.worker, r.repetition),
            )
            if self._inflight == plan_id:
                self._inflight = None
            return CollectResult(reports=reports, timed_out=not complete)


# ---------------------------------------------------------------------------
# Worker side


def worker_run(
    endpoint: tuple[str, int],
    policy: QPolicy,
    library,
    store_path: str | Path,
    worker_id: str,
    *,
    jitter: float = 0.05,
    source: str = "self-improvement",
    send_frames: bool = False,
    criteria: reward_lib.SuccessCriteria | None = None,
) -> int:
    """Serve plans until the broker hangs up; returns episodes executed.

    Each repetition resets the world with a seed derived from
    (plan_id, worker, repetition), runs the plan's captions open-loop,
    appends the judged episode to this worker's own shard, and reports.
    """
    store_path = Path(store_path)
    store = None  # created lazily so a planless session leaves no file
    executed = 0
    criteria = criteria or reward_lib.SuccessCriteria()
    with socket.create_connection(endpoint) as sock:
        _send(sock, BusMessage("JOIN", worker_id, payload={"version": PROTOCOL_VERSION}))
        with sock.makefile("r", encoding="utf-8") as lines:
            ack = BusMessage.from_line(next(lines))
            if ack.type != "JOIN" or not ack.payload.get("ack"):
                raise RuntimeError(f"join rejected: {ack.payload}")
            for line in lines:
                if not line.strip():
                    continue
                message = BusMessage.from_line(line)
                if message.type != "PLAN":
                    continue
                plan = Plan.from_dict(message.payload["plan"])
                repetitions = int(message.payload["repetitions"])
                segment_steps = int(message.payload["segment_steps"])
                unknown = [c for c in plan.retrieved_skills if c not in policy.channels]
                for repetition in range(repetitions):
                    if unknown:
                        _send(sock, BusMessage(
                            "EPISODE_REPORT", worker_id, plan_id=message.plan_id,
                            payload={"worker": worker_id, "repetition": repetition,
                                     "success": False, "finals": {},
                                     "episode_ref": "",
                                     "error": f"unknown captions: {unknown}"},
                        ))
                        continue
                    seed = episode_seed(message.plan_id, worker_id, repetition)
                    episode = rollout_plan(
                        policy, library, plan, seed=seed,
                        segment_steps=segment_steps, jitter=jitter, source=source,
                        episode_id=f"plan{message.plan_id}-{worker_id}-rep{repetition}",
                    )
                    success, finals = reward_lib.judge_success(episode, plan, criteria)
                    episode.success = success
                    if store is None:
                        # header mirrors what rollouts actually record: the
                        # library's channels (which may be a policy subset)
                        captions = tuple(
                            library.channel_map() if hasattr(library, "channel_map")
                            else library
                        )
                        store = EpisodeStore(store_path, captions)
                    store.append(episode)
                    executed += 1
                    _send(sock, BusMessage(
                        "EPISODE_REPORT", worker_id, plan_id=message.plan_id,
                        payload={"worker": worker_id, "repetition": repetition,
                                 "success": success, "finals": finals,
                                 "episode_ref": f"{store_path.name}#{episode.episode_id}"},
                    ))
                    if send_frames:
                        scene = world_lib.describe(episode.steps[-1].state).to_text()
                        _send(sock, BusMessage(
                            "FRAME", worker_id, plan_id=message.plan_id,
                            payload={"repetition": repetition, "scene": scene},
                        ))
    return executed


def fold_history(history, plans: Mapping[int, Plan], reports: Iterable[Report]) -> None:
    """Record every report against its plan's proposal, order-independently."""
    for report in sorted(reports, key=lambda r: (r.plan_id, r.worker, r.repetition)):
        history.record(plans[report.plan_id].proposal, report.success)
