"""Drives a scenario: in-process server, one scripted driver per actor,
fault injection, then assertion evaluation over the recorded event logs.

Every actor is a real client from the client module; nothing is observed
through server internals except the final stats counters.  Each actor gets
a recorder thread draining its event stream into a timestamped log, and all
checks run after quiescence against those logs, so repeated runs are
deterministic in outcomes even though timings wander.
"""

from __future__ import annotations

import json
import random
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from eteach.client import (
    AudioReceived, ChatReceived, ClientConfig, Errored, InviteReceived,
    PageBytesReady, PageChanged, PeerCursor, SessionEnded, SessionStarted,
    connect_and_login,
)
from eteach.protocol import MATERIAL, MATERIAL_HEADER_LEN
from eteach.server import ServerConfig, ServerCore
from eteach.server.store import Repo, add_user
from eteach.tools.scenario import Scenario

QUIESCE_SECS = 1.5
ACCEPT_WAIT_SECS = 10.0


class ServerSpawnFailed(Exception):
    pass


class _StepFailure(Exception):
    pass


class _Actor:
    def __init__(self, name: str, role: str, password: str, cache_dir: Path):
        self.name = name
        self.role = role
        self.password = password
        self.cache_dir = cache_dir
        self.client = None
        self.log: list[tuple[float, object]] = []
        self.lock = threading.Lock()
        self.recorder: threading.Thread | None = None
        self.answered: set[int] = set()
        self.failures: list[str] = []
        self.workers: list[threading.Thread] = []
        self.disconnected_by_script = False
        self.material_bytes = 0
        self.audio_sent = 0
        self.material_frames_recv = 0
        self.login_at: float | None = None

    def record(self, t: float, event) -> None:
        with self.lock:
            self.log.append((t, event))

    def snapshot(self) -> list[tuple[float, object]]:
        with self.lock:
            return list(self.log)

    def close_client(self) -> None:
        client = self.client
        if client is None:
            return
        client.close()
        self.audio_sent += client.sent_frames["audio"]
        self.material_frames_recv += client.recv_frames["material"]
        self.client = None


class _Digest:
    """Per-actor view of the recorded log, shaped for the checks."""

    def __init__(self, log: list[tuple[float, object]]):
        self.public: list[tuple[int, str, str]] = []
        self.private: list[tuple[str, str]] = []
        self.invites: list[InviteReceived] = []
        self.errors: list[Errored] = []
        self.ended: list[str] = []
        self.page_changed: list[tuple[float, str, int, str]] = []
        self.page_ready: list[str] = []
        self.sessions: list[dict] = []
        current = None
        for t, ev in log:
            if isinstance(ev, SessionStarted):
                current = {"start": t, "end": None, "audio": [], "cursor_ts": []}
                self.sessions.append(current)
            elif isinstance(ev, SessionEnded):
                self.ended.append(ev.reason)
                if current is not None:
                    current["end"] = t
                    current = None
            elif isinstance(ev, AudioReceived):
                if current is not None:
                    current["audio"].append(ev.seq)
            elif isinstance(ev, PeerCursor):
                if current is not None:
                    current["cursor_ts"].append(t)
            elif isinstance(ev, ChatReceived):
                if ev.private:
                    self.private.append((ev.sender, ev.text))
                else:
                    self.public.append((ev.seq, ev.sender, ev.text))
            elif isinstance(ev, InviteReceived):
                self.invites.append(ev)
            elif isinstance(ev, Errored):
                self.errors.append(ev)
            elif isinstance(ev, PageChanged):
                self.page_changed.append((t, ev.material_id, ev.page_index, ev.digest))
            elif isinstance(ev, PageBytesReady):
                self.page_ready.append(ev.digest)

    def audio_gaps(self) -> int:
        gaps = 0
        for sess in self.sessions:
            seqs = sess["audio"]
            if seqs:
                gaps += (seqs[-1] - seqs[0] + 1) - len(seqs)
        return gaps

    def audio_monotonic(self) -> bool:
        return all(
            all(a < b for a, b in zip(sess["audio"], sess["audio"][1:]))
            for sess in self.sessions
        )


@dataclass
class CheckResult:
    name: str
    check: str
    ok: bool
    detail: str


@dataclass
class RunReport:
    scenario: str
    ok: bool
    assertions: list[CheckResult]
    metrics: dict
    server_stats: dict
    wall_seconds: float
    step_failures: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "scenario": self.scenario,
            "ok": self.ok,
            "wall_seconds": round(self.wall_seconds, 3),
            "assertions": [
                {"name": r.name, "check": r.check, "ok": r.ok, "detail": r.detail}
                for r in self.assertions
            ],
            "step_failures": self.step_failures,
            "metrics": self.metrics,
            "server_stats": self.server_stats,
        }


class ScenarioRunner:
    def __init__(self, scenario: Scenario, time_scale: float = 1.0,
                 data_dir: Path | None = None):
        if time_scale <= 0:
            raise ValueError("time_scale must be positive")
        self.scenario = scenario
        self.scale = time_scale
        self.data_dir = Path(data_dir) if data_dir else Path(
            tempfile.mkdtemp(prefix="eteach-sim-"))
        self.actors: dict[str, _Actor] = {}
        self.material_ids: dict[str, str] = {}
        self.page_digests: dict[tuple[str, int], str] = {}
        self.core: ServerCore | None = None
        self.t0 = 0.0
        self._timers: list[threading.Timer] = []
        self._chat_sent: list[str] = []
        self._chat_prv_sent = 0
        self._step_delays: list[float] = []
        self._delay_lock = threading.Lock()
        self._digest_cache: dict[str, _Digest] | None = None
        self._fault_failures: list[str] = []

    # --- setup ---

    def _seed(self) -> None:
        users_path = self.data_dir / "users.json"
        for user in self.scenario.teachers:
            add_user(users_path, user["username"], user["password"], "teacher",
                     user.get("display_name", ""))
        for user in self.scenario.students:
            add_user(users_path, user["username"], user["password"], "student",
                     user.get("display_name", ""))
        repo = Repo(self.data_dir / "repo")
        for mat in self.scenario.materials:
            pages = [random.Random(int(p.get("seed", i))).randbytes(int(p["size"]))
                     for i, p in enumerate(mat["pages"])]
            rec = repo.store_material(mat["name"], mat.get("owner", ""), pages)
            self.material_ids[mat["name"]] = rec.material_id
            for i, digest in enumerate(rec.pages):
                self.page_digests[(mat["name"], i)] = digest.hex()
        roles = self.scenario.actors
        passwords = {u["username"]: u["password"]
                     for u in self.scenario.teachers + self.scenario.students}
        for name, role in roles.items():
            self.actors[name] = _Actor(name, role, passwords[name],
                                       self.data_dir / "cache" / name)

    def _server_config(self) -> ServerConfig:
        cfg = dict(self.scenario.config)
        scaled = {
            "idle_threshold": float(cfg.pop("idle_threshold", 300.0)) * self.scale,
            "sweep_interval": float(cfg.pop("sweep_interval", 10.0)) * self.scale,
            "invite_expiry": float(cfg.pop("invite_expiry", 60.0)) * self.scale,
        }
        server_keys = ("cursor_min_interval", "audio_queue_cap", "sndbuf")
        extra = {k: cfg[k] for k in server_keys if k in cfg}
        return ServerConfig(
            repo_dir=self.data_dir / "repo",
            users_path=self.data_dir / "users.json",
            bookmarks_path=self.data_dir / "bookmarks.json",
            enable_fault_hooks=True,
            enable_gateway=False,
            **scaled, **extra)

    def _client_config(self, actor: _Actor) -> ClientConfig:
        cfg = self.scenario.config
        return ClientConfig(
            host=self.core.listen_addr[0],
            port=self.core.listen_addr[1],
            cache_dir=actor.cache_dir,
            cursor_period=float(cfg.get("client_cursor_period", 1.0)),
            activity_coalesce=float(cfg.get("client_activity_coalesce", 30.0)),
            rcvbuf=cfg.get("client_rcvbuf"),
        )

    # --- run ---

    def run(self) -> RunReport:
        started = time.monotonic()
        self._seed()
        try:
            self.core = ServerCore(self._server_config()).start()
        except Exception as exc:
            raise ServerSpawnFailed(str(exc)) from exc
        try:
            self.t0 = time.monotonic()
            by_actor: dict[str, list] = {}
            for step in self.scenario.steps:
                by_actor.setdefault(step.actor, []).append(step)
            drivers = [
                threading.Thread(target=self._drive, args=(self.actors[name], steps),
                                 name=f"drive-{name}", daemon=True)
                for name, steps in by_actor.items()
            ]
            fault_thread = threading.Thread(target=self._inject_faults,
                                            name="faults", daemon=True)
            for t in drivers:
                t.start()
            fault_thread.start()
            for t in drivers:
                t.join()
            fault_thread.join()
            for actor in self.actors.values():
                for worker in actor.workers:
                    worker.join()
            time.sleep(QUIESCE_SECS)
            for actor in self.actors.values():
                actor.close_client()
            for actor in self.actors.values():
                if actor.recorder:
                    actor.recorder.join(timeout=3.0)
            server_stats = self.core.stats()
        finally:
            for timer in self._timers:
                timer.cancel()
            self.core.stop()
        results = [self._evaluate(a) for a in self.scenario.assertions]
        step_failures = [f"{a.name}: {msg}" for a in self.actors.values()
                         for msg in a.failures]
        step_failures += [f"fault: {msg}" for msg in self._fault_failures]
        ok = all(r.ok for r in results) and not step_failures
        return RunReport(
            scenario=self.scenario.name,
            ok=ok,
            assertions=results,
            metrics=self._metrics(server_stats),
            server_stats=server_stats,
            wall_seconds=time.monotonic() - started,
            step_failures=step_failures,
        )

    # --- actor driving ---

    def _sleep_until(self, at: float) -> float:
        target = self.t0 + at * self.scale
        while True:
            now = time.monotonic()
            if now >= target:
                return now - target
            time.sleep(min(0.2, target - now))

    def _drive(self, actor: _Actor, steps: list) -> None:
        for step in steps:
            delay = self._sleep_until(step.at)
            with self._delay_lock:
                self._step_delays.append(delay)
            try:
                self._execute(actor, step)
            except Exception as exc:
                actor.failures.append(f"{step.action}@{step.at}: {exc}")

    def _execute(self, actor: _Actor, step) -> None:
        action = step.action
        p = step.params
        if action == "login":
            self._login(actor)
        elif action == "chat":
            self._need(actor)
            text = p["text"]
            if p.get("to"):
                actor.client.send_private(p["to"], text)
                self._chat_prv_sent += 1
            else:
                actor.client.send_public(text)
                self._chat_sent.append(text)
        elif action == "activity":
            self._need(actor).report_activity()
        elif action == "invite":
            self._need(actor).invite(p["student"])
        elif action == "accept":
            self._accept(actor, p.get("accept", True))
        elif action == "set_page":
            mid = self.material_ids.get(p["material"], p["material"])
            self._need(actor).set_page(mid, int(p["page"]))
        elif action == "cursor_walk":
            # Runs alongside later steps: the teacher keeps talking while
            # moving the pointer, so walks and bursts must not block the driver.
            self._spawn(actor, step, self._cursor_walk, actor,
                        p["path"], float(p["duration"]))
        elif action == "audio_burst":
            self._spawn(actor, step, self._audio_burst, actor, int(p["n"]),
                        int(p.get("size", 320)), float(p.get("gap", 0.02)))
        elif action == "end":
            self._need(actor).end_session()
        elif action == "disconnect":
            actor.disconnected_by_script = True
            actor.close_client()
        elif action == "wait":
            pass

    def _need(self, actor: _Actor):
        if actor.client is None:
            raise _StepFailure("actor is not logged in")
        return actor.client

    def _spawn(self, actor: _Actor, step, fn, *args) -> None:
        self._need(actor)

        def body() -> None:
            try:
                fn(*args)
            except Exception as exc:
                actor.failures.append(f"{step.action}@{step.at}: {exc}")

        worker = threading.Thread(
            target=body, name=f"{step.action}-{actor.name}", daemon=True)
        worker.start()
        actor.workers.append(worker)

    def _login(self, actor: _Actor) -> None:
        client = connect_and_login(self._client_config(actor), actor.name,
                                   actor.password)

        def material_tap(raw: bytes) -> None:
            if raw[4] == MATERIAL:
                actor.material_bytes += len(raw) - 5 - MATERIAL_HEADER_LEN

        client.wire_in_hook = material_tap
        actor.client = client
        actor.login_at = time.monotonic() - self.t0

        def pump() -> None:
            while True:
                ev = client.next_event(timeout=0.5)
                if ev is None:
                    continue
                actor.record(time.monotonic() - self.t0, ev)
                if isinstance(ev, Errored) and ev.code == "DISCONNECTED":
                    return

        actor.recorder = threading.Thread(target=pump, name=f"rec-{actor.name}",
                                          daemon=True)
        actor.recorder.start()

    def _accept(self, actor: _Actor, accept: bool) -> None:
        client = self._need(actor)
        deadline = time.monotonic() + ACCEPT_WAIT_SECS
        while time.monotonic() < deadline:
            pending = [ev.session_id for _, ev in actor.snapshot()
                       if isinstance(ev, InviteReceived)
                       and ev.session_id not in actor.answered]
            if pending:
                sid = pending[-1]
                actor.answered.add(sid)
                client.respond_invite(sid, accept)
                return
            time.sleep(0.02)
        raise _StepFailure("no invite arrived to accept")

    def _cursor_walk(self, actor: _Actor, path: list, duration: float) -> None:
        client = self._need(actor)
        points = [(float(x), float(y)) for x, y in path]
        if not points:
            return
        start = time.monotonic()
        while True:
            elapsed = time.monotonic() - start
            if elapsed >= duration:
                break
            frac = elapsed / duration
            pos = frac * (len(points) - 1)
            i = min(int(pos), len(points) - 2) if len(points) > 1 else 0
            if len(points) == 1:
                x, y = points[0]
            else:
                f = pos - i
                x = points[i][0] + (points[i + 1][0] - points[i][0]) * f
                y = points[i][1] + (points[i + 1][1] - points[i][1]) * f
            client.set_cursor(x, y)
            time.sleep(0.05)

    def _audio_burst(self, actor: _Actor, n: int, size: int, gap: float) -> None:
        client = self._need(actor)
        size = max(size, 4)
        for i in range(n):
            payload = i.to_bytes(4, "big") + bytes(size - 4)
            client.send_audio(payload)
            if gap:
                time.sleep(gap)

    # --- fault injection ---

    def _inject_faults(self) -> None:
        for fault in sorted(self.scenario.faults, key=lambda f: f.at):
            self._sleep_until(fault.at)
            try:
                self._apply_fault(fault)
            except Exception as exc:
                self._fault_failures.append(f"{fault.kind}@{fault.at}: {exc}")

    def _apply_fault(self, fault) -> None:
        if fault.kind == "data_manager_fault":
            self.core.set_data_fault(True)
            if fault.duration > 0:
                timer = threading.Timer(fault.duration,
                                        lambda: self.core.set_data_fault(False))
                timer.daemon = True
                timer.start()
                self._timers.append(timer)
            return
        actor = self.actors[fault.target]
        client = actor.client
        if client is None:
            raise _StepFailure(f"target {fault.target} has no live client")
        if fault.kind == "client_disconnect":
            actor.disconnected_by_script = True
            actor.close_client()
        elif fault.kind == "peer_stall":
            client.pause_reading()
            timer = threading.Timer(max(fault.duration, 0.1), client.resume_reading)
            timer.daemon = True
            timer.start()
            self._timers.append(timer)
        elif fault.kind == "chunk_corruption":
            armed = threading.Event()
            armed.set()

            def corrupt(raw: bytes) -> bytes:
                if armed.is_set() and raw[4] == MATERIAL \
                        and len(raw) > 5 + MATERIAL_HEADER_LEN:
                    armed.clear()
                    flipped = bytearray(raw)
                    flipped[5 + MATERIAL_HEADER_LEN] ^= 0xFF
                    return bytes(flipped)
                return raw

            client.inbound_transform = corrupt

    # --- checks ---

    def _full_time_actors(self) -> list[str]:
        return [name for name, a in self.actors.items()
                if a.login_at is not None and not a.disconnected_by_script]

    def _digests(self) -> dict[str, _Digest]:
        if self._digest_cache is None:
            self._digest_cache = {name: _Digest(a.snapshot())
                                  for name, a in self.actors.items()}
        return self._digest_cache

    def _match_actors(self, pattern) -> list[str]:
        if pattern in (None, "*"):
            return list(self.actors)
        return [pattern]

    def _evaluate(self, assertion) -> CheckResult:
        digests = self._digests()
        p = assertion.params
        check = assertion.check
        ok, detail = True, ""

        if check == "public_chat":
            sent = sorted(self._chat_sent)
            sequences = {}
            for name in self._full_time_actors():
                d = digests[name]
                if sorted(t for _, _, t in d.public) != sent:
                    ok = False
                    detail = (f"{name} got {len(d.public)} of {len(sent)} "
                              f"public messages")
                    break
                sequences[name] = d.public
            if ok and sequences:
                reference = next(iter(sequences.values()))
                for name, seq in sequences.items():
                    if seq != reference:
                        ok, detail = False, f"{name} observed a different order"
                        break
            if ok:
                detail = f"{len(sent)} messages, identical order at " \
                         f"{len(sequences)} clients"
        elif check == "sessions_completed":
            d = digests[p["actor"]]
            want = int(p["count"])
            got = min(len(d.sessions), len(d.ended))
            ok = len(d.sessions) == want and len(d.ended) == want
            detail = f"{got}/{want} sessions started and ended"
        elif check == "cursor_received":
            d = digests[p["actor"]]
            n = sum(len(s["cursor_ts"]) for s in d.sessions)
            lo, hi = int(p.get("min", 0)), p.get("max")
            ok = n >= lo and (hi is None or n <= int(hi))
            detail = f"{n} cursor events (want {lo}..{hi})"
        elif check == "audio_received":
            d = digests[p["actor"]]
            n = sum(len(s["audio"]) for s in d.sessions)
            lo, hi = int(p.get("min", 0)), p.get("max")
            ok = n >= lo and (hi is None or n <= int(hi))
            detail = f"{n} audio frames (want {lo}..{hi})"
        elif check == "audio_monotonic":
            bad = [name for name in self._match_actors(p.get("actor"))
                   if not digests[name].audio_monotonic()]
            ok = not bad
            detail = f"inversions at {bad}" if bad else "no seq inversions"
        elif check == "audio_gaps":
            d = digests[p["actor"]]
            gaps = d.audio_gaps()
            lo, hi = int(p.get("min", 0)), p.get("max")
            ok = gaps >= lo and (hi is None or gaps <= int(hi))
            detail = f"{gaps} missing frames (want {lo}..{hi})"
        elif check == "errored":
            d = digests[p["actor"]]
            hits = [e for e in d.errors if e.code == p["code"]
                    and (not p.get("op") or e.context == p["op"])]
            lo, hi = int(p.get("min", 1)), p.get("max")
            ok = len(hits) >= lo and (hi is None or len(hits) <= int(hi))
            detail = f"{len(hits)} x {p['code']} (want {lo}..{hi})"
        elif check == "no_errored":
            allowed = set(p.get("except_codes", [])) | {"DISCONNECTED"}
            offenders = []
            for name in self._match_actors(p.get("actor")):
                for e in digests[name].errors:
                    if e.code not in allowed:
                        offenders.append(f"{name}:{e.code}({e.context})")
            ok = not offenders
            detail = "; ".join(offenders[:5]) if offenders else "clean"
        elif check == "session_ended":
            d = digests[p["actor"]]
            n = d.ended.count(p["reason"])
            ok = n >= int(p.get("min", 1))
            detail = f"{n} x {p['reason']} (reasons: {d.ended})"
        elif check == "page_converged":
            dt = digests[p["teacher"]]
            ds = digests[p["student"]]
            if not dt.page_changed or not ds.page_changed:
                ok, detail = False, "a party saw no page event"
            else:
                a = dt.page_changed[-1][1:]
                b = ds.page_changed[-1][1:]
                ok = a == b
                detail = f"teacher={a} student={b}"
        elif check == "page_ready":
            d = digests[p["actor"]]
            n = len(d.page_ready)
            ok = n >= int(p.get("min", 1))
            detail = f"{n} pages ready"
        elif check == "material_frames":
            actor = self.actors[p["actor"]]
            n = actor.material_frames_recv
            lo, hi = int(p.get("min", 0)), p.get("max")
            ok = n >= lo and (hi is None or n <= int(hi))
            detail = f"{n} material frames (want {lo}..{hi})"
        return CheckResult(assertion.name, check, ok, detail)

    # --- metrics ---

    def _metrics(self, server_stats: dict) -> dict:
        digests = self._digests()
        public_delivered = sum(len(d.public) for d in digests.values())
        private_delivered = sum(len(d.private) for d in digests.values())
        audio_delivered = sum(
            len(s["audio"]) for d in digests.values() for s in d.sessions)
        audio_sent = sum(a.audio_sent for a in self.actors.values())
        audio_dropped = server_stats.get("audio_dropped", 0)
        gap_counts = {name: d.audio_gaps() for name, d in digests.items()
                      if any(s["audio"] for s in d.sessions)}
        cadence: dict[str, int] = {}
        for d in digests.values():
            for sess in d.sessions:
                end = sess["end"] if sess["end"] is not None else (
                    sess["cursor_ts"][-1] if sess["cursor_ts"] else sess["start"])
                seconds = max(1, int(end - sess["start"]) + 1)
                buckets = [0] * seconds
                for t in sess["cursor_ts"]:
                    buckets[min(int(t - sess["start"]), seconds - 1)] += 1
                for b in buckets:
                    cadence[str(b)] = cadence.get(str(b), 0) + 1
        convergence_ms = self._convergence(digests)
        sequences = [digests[n].public for n in self._full_time_actors()]
        reference = sequences[0] if sequences else []
        ordering_violations = sum(1 for s in sequences if s != reference)
        delays = self._step_delays
        return {
            "messages": {
                "public_sent": len(self._chat_sent),
                "public_delivered": public_delivered,
                "private_sent": self._chat_prv_sent,
                "private_delivered": private_delivered,
            },
            "ordering_violations": ordering_violations,
            "cursor_cadence_histogram": cadence,
            "page_convergence_ms": convergence_ms,
            "transfer": {
                "material_bytes": {n: a.material_bytes for n, a in self.actors.items()
                                   if a.material_bytes},
                "material_frames": {n: a.material_frames_recv
                                    for n, a in self.actors.items()
                                    if a.material_frames_recv},
            },
            "audio": {
                "sent": audio_sent,
                "delivered": audio_delivered,
                "dropped_at_server": audio_dropped,
                "in_flight_at_shutdown": audio_sent - audio_delivered - audio_dropped,
                "gap_counts": gap_counts,
            },
            "step_delay_ms": {
                "mean": round(1000 * sum(delays) / len(delays), 2) if delays else 0.0,
                "max": round(1000 * max(delays), 2) if delays else 0.0,
            },
        }

    def _convergence(self, digests: dict[str, _Digest]) -> dict:
        spreads = []
        for name, digest in digests.items():
            if self.actors[name].role != "teacher":
                continue
            for t, mid, page, dg in digest.page_changed:
                best = None
                for other, od in digests.items():
                    if other == name or self.actors[other].role == "teacher":
                        continue
                    for ot, omid, opage, odg in od.page_changed:
                        if (omid, opage, odg) == (mid, page, dg):
                            spread = abs(ot - t)
                            best = spread if best is None else min(best, spread)
                if best is not None:
                    spreads.append(best * 1000)
        if not spreads:
            return {"samples": 0}
        return {
            "samples": len(spreads),
            "mean_ms": round(sum(spreads) / len(spreads), 2),
            "max_ms": round(max(spreads), 2),
        }
