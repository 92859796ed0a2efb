from eteach.server.config import ServerConfig
from eteach.server.core import ServerCore

__all__ = ["ServerConfig", "ServerCore"]
