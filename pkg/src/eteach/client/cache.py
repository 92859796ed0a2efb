"""Content-addressed page cache kept in a per-client directory.

Entries are files named by the 64-hex digest of their content.  A digest
present here never triggers a network transfer again, so startup re-verifies
every entry and silently evicts anything that no longer hashes to its name.
"""

from __future__ import annotations

import os
from pathlib import Path

from eteach.protocol import digest_bytes


class PageCache:
    def __init__(self, root: Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.verify()

    def verify(self) -> int:
        evicted = 0
        for path in self.root.iterdir():
            if not path.is_file() or len(path.name) != 64:
                continue
            try:
                digest = bytes.fromhex(path.name)
            except ValueError:
                continue
            if digest_bytes(path.read_bytes()) != digest:
                path.unlink(missing_ok=True)
                evicted += 1
        return evicted

    def _path(self, digest: bytes) -> Path:
        return self.root / digest.hex()

    def has(self, digest: bytes) -> bool:
        return self._path(digest).exists()

    def get(self, digest: bytes) -> bytes | None:
        path = self._path(digest)
        if not path.exists():
            return None
        return path.read_bytes()

    def put(self, digest: bytes, data: bytes) -> Path:
        if digest_bytes(data) != digest:
            raise ValueError("data does not hash to the given digest")
        path = self._path(digest)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(data)
        os.replace(tmp, path)
        return path
