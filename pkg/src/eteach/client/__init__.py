from eteach.client.cache import PageCache
from eteach.client.core import (
    AudioReceived,
    ChatReceived,
    ClientConfig,
    ClientDisconnected,
    ClientError,
    ConnectFailed,
    Errored,
    ETeachClient,
    InviteReceived,
    LoginFailed,
    MaterialListed,
    PageBytesReady,
    PageChanged,
    PeerCursor,
    PresenceChanged,
    SessionEnded,
    SessionStarted,
    UserListUpdated,
    connect_and_login,
)

__all__ = [
    "AudioReceived",
    "ChatReceived",
    "ClientConfig",
    "ClientDisconnected",
    "ClientError",
    "ConnectFailed",
    "ETeachClient",
    "Errored",
    "InviteReceived",
    "LoginFailed",
    "MaterialListed",
    "PageBytesReady",
    "PageCache",
    "PageChanged",
    "PeerCursor",
    "PresenceChanged",
    "SessionEnded",
    "SessionStarted",
    "UserListUpdated",
    "connect_and_login",
]
