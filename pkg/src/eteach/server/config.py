from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

DEFAULT_IDLE_THRESHOLD = 300.0   # seconds without activity before a user is idle
DEFAULT_SWEEP_INTERVAL = 10.0
DEFAULT_CURSOR_MIN_INTERVAL = 1.0
DEFAULT_AUDIO_QUEUE_CAP = 64
DEFAULT_INVITE_EXPIRY = 60.0
MAX_TEXT_BYTES = 4096
MAX_PAGE_BYTES = 8 * 1024 * 1024


@dataclass
class ServerConfig:
    repo_dir: Path
    users_path: Path
    bookmarks_path: Path
    listen_host: str = "127.0.0.1"
    listen_port: int = 0            # 0 = ephemeral
    gateway_host: str = "127.0.0.1"
    gateway_port: int = 0
    idle_threshold: float = DEFAULT_IDLE_THRESHOLD
    sweep_interval: float = DEFAULT_SWEEP_INTERVAL
    cursor_min_interval: float = DEFAULT_CURSOR_MIN_INTERVAL
    audio_queue_cap: int = DEFAULT_AUDIO_QUEUE_CAP
    invite_expiry: float = DEFAULT_INVITE_EXPIRY
    enable_fault_hooks: bool = False
    enable_gateway: bool = True
    sndbuf: int | None = None       # shrink per-connection send buffers (backpressure tests)

    def __post_init__(self) -> None:
        self.repo_dir = Path(self.repo_dir)
        self.users_path = Path(self.users_path)
        self.bookmarks_path = Path(self.bookmarks_path)
        if not self.idle_threshold > self.sweep_interval > 0:
            raise ValueError(
                f"require idle_threshold > sweep_interval > 0, "
                f"got {self.idle_threshold} / {self.sweep_interval}"
            )
