"""User database, bookmark store, and content-addressed material repository.

The plain load/save helpers and the Repo class are also used directly by the
admin CLI.  Inside a running server all access goes through the DataManager,
which owns the stores on its own thread and is talked to purely by message
passing, so a fault (or crash) in here can never stall the chat, presence,
or live-session paths.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import queue
import secrets
import threading
from dataclasses import dataclass
from pathlib import Path

from eteach.protocol import digest_bytes

log = logging.getLogger(__name__)

ROLES = ("teacher", "student")


class DataUnavailable(Exception):
    """The data manager is faulted, dead, or failed to serve the request."""


class DuplicateUser(Exception):
    pass


def atomic_write_json(path: Path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")
    os.replace(tmp, path)


@dataclass
class UserRecord:
    username: str
    display_name: str
    role: str
    salt: bytes
    password_hash: bytes

    @classmethod
    def create(cls, username: str, password: str, role: str, display_name: str = "") -> "UserRecord":
        if not username:
            raise ValueError("username must be non-empty")
        if role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}, got {role!r}")
        salt = secrets.token_bytes(16)
        return cls(
            username=username,
            display_name=display_name or username,
            role=role,
            salt=salt,
            password_hash=hashlib.sha256(salt + password.encode("utf-8")).digest(),
        )

    def check_password(self, password: str) -> bool:
        candidate = hashlib.sha256(self.salt + password.encode("utf-8")).digest()
        return secrets.compare_digest(candidate, self.password_hash)

    def to_json(self) -> dict:
        return {
            "username": self.username,
            "display_name": self.display_name,
            "role": self.role,
            "salt": self.salt.hex(),
            "password_hash": self.password_hash.hex(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "UserRecord":
        return cls(
            username=obj["username"],
            display_name=obj.get("display_name", obj["username"]),
            role=obj["role"],
            salt=bytes.fromhex(obj["salt"]),
            password_hash=bytes.fromhex(obj["password_hash"]),
        )


def load_users(path: Path) -> dict[str, UserRecord]:
    path = Path(path)
    if not path.exists():
        return {}
    records = [UserRecord.from_json(obj) for obj in json.loads(path.read_text(encoding="utf-8"))]
    return {rec.username: rec for rec in records}


def save_users(path: Path, users: dict[str, UserRecord]) -> None:
    atomic_write_json(path, [rec.to_json() for rec in users.values()])


def add_user(path: Path, username: str, password: str, role: str, display_name: str = "") -> UserRecord:
    users = load_users(path)
    if username in users:
        raise DuplicateUser(username)
    rec = UserRecord.create(username, password, role, display_name)
    users[username] = rec
    save_users(path, users)
    return rec


@dataclass
class Bookmark:
    username: str
    material_id: str
    page_index: int

    def to_json(self) -> dict:
        return {"username": self.username, "material_id": self.material_id,
                "page_index": self.page_index}


class BookmarkStore:
    """Per-student page bookmarks, kept in update order (last entry = freshest)."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self._marks: list[Bookmark] = []
        if self.path.exists():
            self._marks = [
                Bookmark(obj["username"], obj["material_id"], int(obj["page_index"]))
                for obj in json.loads(self.path.read_text(encoding="utf-8"))
            ]

    def set(self, username: str, material_id: str, page_index: int) -> None:
        self._marks = [
            m for m in self._marks
            if not (m.username == username and m.material_id == material_id)
        ]
        self._marks.append(Bookmark(username, material_id, page_index))
        atomic_write_json(self.path, [m.to_json() for m in self._marks])

    def get(self, username: str, material_id: str) -> Bookmark | None:
        for m in self._marks:
            if m.username == username and m.material_id == material_id:
                return m
        return None

    def latest(self, username: str) -> Bookmark | None:
        for m in reversed(self._marks):
            if m.username == username:
                return m
        return None


@dataclass
class MaterialRecord:
    material_id: str
    name: str
    owner: str
    pages: list[bytes]      # 32-byte page digests, in display order
    sizes: list[int]

    @property
    def page_count(self) -> int:
        return len(self.pages)

    def to_json(self) -> dict:
        return {
            "material_id": self.material_id,
            "name": self.name,
            "owner": self.owner,
            "pages": [d.hex() for d in self.pages],
            "sizes": list(self.sizes),
        }

    def to_wire(self) -> dict:
        return self.to_json()

    @classmethod
    def from_json(cls, obj: dict) -> "MaterialRecord":
        return cls(
            material_id=obj["material_id"],
            name=obj["name"],
            owner=obj.get("owner", ""),
            pages=[bytes.fromhex(h) for h in obj["pages"]],
            sizes=[int(s) for s in obj["sizes"]],
        )


class Repo:
    """Content-addressed page store: <root>/index.json plus <root>/objects/<64-hex>."""

    def __init__(self, root: Path, verify: bool = True):
        self.root = Path(root)
        self.objects = self.root / "objects"
        self.objects.mkdir(parents=True, exist_ok=True)
        self.index_path = self.root / "index.json"
        self._materials: dict[str, MaterialRecord] = {}
        if self.index_path.exists():
            for obj in json.loads(self.index_path.read_text(encoding="utf-8")):
                rec = MaterialRecord.from_json(obj)
                self._materials[rec.material_id] = rec
        if verify:
            self.verify()

    def verify(self) -> list[str]:
        """Re-hash every referenced object; drop materials with bad pages."""
        dropped = []
        for mid, rec in list(self._materials.items()):
            for digest in rec.pages:
                path = self.objects / digest.hex()
                if not path.exists() or digest_bytes(path.read_bytes()) != digest:
                    log.warning("material %s page %s missing or corrupt; dropping", mid, digest.hex())
                    dropped.append(mid)
                    del self._materials[mid]
                    break
        return dropped

    def _next_id(self) -> str:
        highest = 0
        for mid in self._materials:
            if mid.startswith("m") and mid[1:].isdigit():
                highest = max(highest, int(mid[1:]))
        return f"m{highest + 1:04d}"

    def _save_index(self) -> None:
        atomic_write_json(self.index_path, [rec.to_json() for rec in self.list()])

    def store_material(self, name: str, owner: str, pages: list[bytes]) -> MaterialRecord:
        if not pages:
            raise ValueError("material needs at least one page")
        digests = []
        for data in pages:
            digest = digest_bytes(data)
            blob = self.objects / digest.hex()
            if not blob.exists():
                tmp = blob.with_name(blob.name + ".tmp")
                tmp.write_bytes(data)
                os.replace(tmp, blob)
            digests.append(digest)
        rec = MaterialRecord(
            material_id=self._next_id(),
            name=name,
            owner=owner,
            pages=digests,
            sizes=[len(p) for p in pages],
        )
        self._materials[rec.material_id] = rec
        self._save_index()
        return rec

    def get(self, material_id: str) -> MaterialRecord | None:
        return self._materials.get(material_id)

    def list(self) -> list[MaterialRecord]:
        return sorted(self._materials.values(), key=lambda r: r.material_id)

    def resolve(self, digest: bytes) -> bytes | None:
        path = self.objects / digest.hex()
        if not path.exists():
            return None
        return path.read_bytes()


class DataManager:
    """Single-owner thread over the user DB, bookmarks, and material repo."""

    def __init__(self, users_path: Path, bookmarks_path: Path, repo_dir: Path,
                 request_timeout: float = 5.0):
        self._users_path = Path(users_path)
        self._bookmarks_path = Path(bookmarks_path)
        self._repo_dir = Path(repo_dir)
        self._timeout = request_timeout
        self._inbox: queue.Queue = queue.Queue()
        self._thread = threading.Thread(target=self._run, name="data-manager", daemon=True)
        self._fault = False
        self._dead = threading.Event()
        self._ready: queue.Queue = queue.Queue()
        self._users: dict[str, UserRecord] = {}
        self._bookmarks: BookmarkStore | None = None
        self._repo: Repo | None = None

    def start(self) -> None:
        self._thread.start()
        outcome = self._ready.get(timeout=self._timeout)
        if isinstance(outcome, Exception):
            raise outcome

    def stop(self) -> None:
        self._inbox.put(None)
        self._thread.join(timeout=2.0)

    def set_fault(self, on: bool) -> None:
        self._fault = bool(on)

    @property
    def faulted(self) -> bool:
        return self._fault

    def request(self, op: str, *args):
        """Synchronous call onto the data-manager thread; raises DataUnavailable."""
        if self._dead.is_set() or not self._thread.is_alive():
            raise DataUnavailable("data manager is not running")
        reply: queue.Queue = queue.Queue(maxsize=1)
        self._inbox.put((op, args, reply.put))
        try:
            result = reply.get(timeout=self._timeout)
        except queue.Empty:
            raise DataUnavailable(f"data manager did not answer {op}") from None
        if isinstance(result, Exception):
            raise result
        return result

    def post(self, op: str, *args, on_error=None) -> None:
        """Fire-and-forget request; on_error(exc) runs on the manager thread."""
        def done(result):
            if isinstance(result, Exception) and on_error is not None:
                on_error(result)
        self._inbox.put((op, args, done))

    # --- manager thread ---

    def _run(self) -> None:
        try:
            self._users = load_users(self._users_path)
            self._bookmarks = BookmarkStore(self._bookmarks_path)
            self._repo = Repo(self._repo_dir)
        except Exception as exc:
            self._dead.set()
            self._ready.put(exc)
            return
        self._ready.put(True)
        while True:
            item = self._inbox.get()
            if item is None:
                break
            op, args, done = item
            if self._fault:
                done(DataUnavailable(f"data manager faulted ({op})"))
                continue
            try:
                handler = getattr(self, "_op_" + op)
                done(handler(*args))
            except Exception as exc:  # keep the thread alive; callers see the failure
                done(DataUnavailable(f"{op} failed: {exc}"))
        self._dead.set()

    def _op_auth(self, username: str, password: str) -> UserRecord | None:
        rec = self._users.get(username)
        if rec is None or not rec.check_password(password):
            return None
        return rec

    def _op_roster(self) -> list[UserRecord]:
        return list(self._users.values())

    def _op_list_materials(self) -> list[MaterialRecord]:
        return self._repo.list()

    def _op_get_material(self, material_id: str) -> MaterialRecord | None:
        return self._repo.get(material_id)

    def _op_resolve(self, digest: bytes) -> bytes | None:
        return self._repo.resolve(digest)

    def _op_store_material(self, name: str, owner: str, pages: list[bytes]) -> MaterialRecord:
        return self._repo.store_material(name, owner, pages)

    def _op_bookmark_set(self, username: str, material_id: str, page_index: int) -> None:
        self._bookmarks.set(username, material_id, page_index)

    def _op_bookmark_get(self, username: str, material_id: str) -> Bookmark | None:
        return self._bookmarks.get(username, material_id)

    def _op_bookmark_latest(self, username: str) -> Bookmark | None:
        return self._bookmarks.latest(username)
