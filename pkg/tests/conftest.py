"""Shared harness: a seeded in-process server and event-draining probes."""

from __future__ import annotations

import socket
import time
from dataclasses import dataclass, field
from pathlib import Path

import pytest

from eteach.client import (
    ClientConfig, Errored, InviteReceived, SessionStarted, connect_and_login,
)
from eteach.protocol import (
    CONTROL, encode_frame, make_control, parse_control, read_frame,
)
from eteach.server import ServerConfig, ServerCore
from eteach.server.store import MaterialRecord, Repo, add_user

DEFAULT_USERS = {
    "cikgu": ("pw-cikgu", "teacher", "Cikgu"),
    "ali": ("pw-ali", "student", "Ali"),
    "siti": ("pw-siti", "student", "Siti"),
    "raju": ("pw-raju", "student", "Raju"),
}


@dataclass
class ServerFixture:
    core: ServerCore
    config: ServerConfig
    data_dir: Path
    passwords: dict[str, str]
    materials: dict[str, MaterialRecord] = field(default_factory=dict)

    @property
    def addr(self):
        return self.core.listen_addr

    def client_config(self, cache_dir: Path, **overrides) -> ClientConfig:
        return ClientConfig(host=self.addr[0], port=self.addr[1],
                            cache_dir=cache_dir, **overrides)

    def restart(self) -> "ServerFixture":
        self.core.stop()
        self.core = ServerCore(self.config).start()
        return self


class Harness:
    """Builds servers and clients for one test; closes everything at the end."""

    def __init__(self, tmp_path: Path):
        self.tmp_path = tmp_path
        self._fixtures: list[ServerFixture] = []
        self._probes: list[Probe] = []
        self._n = 0

    def server(self, users: dict | None = None,
               materials: list[tuple[str, str, list[bytes]]] = (),
               **cfg_overrides) -> ServerFixture:
        self._n += 1
        data_dir = self.tmp_path / f"srv{self._n}"
        users = DEFAULT_USERS if users is None else users
        passwords = {}
        for name, (password, role, display) in users.items():
            add_user(data_dir / "users.json", name, password, role, display)
            passwords[name] = password
        repo = Repo(data_dir / "repo")
        records = {}
        for name, owner, pages in materials:
            records[name] = repo.store_material(name, owner, pages)
        config = ServerConfig(
            repo_dir=data_dir / "repo",
            users_path=data_dir / "users.json",
            bookmarks_path=data_dir / "bookmarks.json",
            enable_gateway=cfg_overrides.pop("enable_gateway", False),
            enable_fault_hooks=True,
            **cfg_overrides)
        fix = ServerFixture(ServerCore(config).start(), config, data_dir,
                            passwords, records)
        self._fixtures.append(fix)
        return fix

    def login(self, fix: ServerFixture, username: str,
              password: str | None = None, **client_overrides) -> "Probe":
        self._n += 1
        cache_dir = client_overrides.pop(
            "cache_dir", self.tmp_path / f"cache-{username}-{self._n}")
        config = fix.client_config(cache_dir, **client_overrides)
        client = connect_and_login(
            config, username,
            fix.passwords[username] if password is None else password)
        probe = Probe(username, client)
        self._probes.append(probe)
        return probe

    def close(self) -> None:
        for probe in self._probes:
            probe.client.close()
        for fix in self._fixtures:
            fix.core.stop()


class Probe:
    """A client plus everything drained off its event queue so far."""

    def __init__(self, name: str, client):
        self.name = name
        self.client = client
        self.seen: list = []

    def expect(self, etype, pred=None, timeout: float = 5.0):
        deadline = time.monotonic() + timeout
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                break
            ev = self.client.next_event(timeout=remaining)
            if ev is None:
                break
            self.seen.append(ev)
            if isinstance(ev, etype) and (pred is None or pred(ev)):
                return ev
        tail = ", ".join(type(e).__name__ for e in self.seen[-8:])
        raise AssertionError(
            f"{self.name}: no {etype.__name__} within {timeout}s (tail: {tail})")

    def expect_error(self, code: str, op: str | None = None,
                     timeout: float = 5.0) -> Errored:
        return self.expect(
            Errored,
            lambda e: e.code == code and (op is None or e.context == op),
            timeout)

    def drain(self, duration: float = 0.3) -> list:
        """Collect whatever arrives within the window."""
        got = []
        deadline = time.monotonic() + duration
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                return got
            ev = self.client.next_event(timeout=remaining)
            if ev is not None:
                self.seen.append(ev)
                got.append(ev)

    def assert_none(self, etype, duration: float = 0.4) -> None:
        hits = [ev for ev in self.drain(duration) if isinstance(ev, etype)]
        assert not hits, f"{self.name}: unexpected {hits}"


class RawConn:
    """Bare-socket speaker for cases the client refuses to produce."""

    def __init__(self, addr):
        self.sock = socket.create_connection(addr, timeout=5.0)

    def send(self, t, body=None):
        self.sock.sendall(encode_frame(make_control(t, body)))

    def send_raw(self, data: bytes):
        self.sock.sendall(data)

    def read(self) -> dict:
        frame = read_frame(self.sock.recv)
        assert frame is not None and frame.kind == CONTROL
        return parse_control(frame)

    def read_until(self, t: str, limit: int = 50) -> dict:
        for _ in range(limit):
            msg = self.read()
            if msg["t"] == t:
                return msg
        raise AssertionError(f"no {t!r} message within {limit} frames")

    def login(self, username: str, password: str) -> dict:
        self.send("login", {"username": username, "password": password, "v": 1})
        return self.read()

    def close(self):
        self.sock.close()


def open_session(teacher: "Probe", student: "Probe") -> int:
    """Invite, accept, and return the agreed session id."""
    teacher.client.invite(student.name)
    invite = student.expect(InviteReceived)
    student.client.respond_invite(invite.session_id, True)
    t_started = teacher.expect(SessionStarted)
    s_started = student.expect(SessionStarted)
    assert t_started.session_id == s_started.session_id == invite.session_id
    assert t_started.peer == student.name
    assert s_started.peer == teacher.name
    return t_started.session_id


@pytest.fixture
def harness(tmp_path):
    h = Harness(tmp_path)
    yield h
    h.close()


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when == "call":
        marker = item.get_closest_marker("criterion")
        if marker:
            verdict = "PASS" if report.passed else "FAIL"
            print(f"\n[CRITERION] {marker.args[0]}: {verdict}", flush=True)
