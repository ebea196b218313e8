from .session import (
    PushResult,
    Session,
    SessionConfig,
    SessionPausedError,
    open_session,
)

__all__ = [
    "Session",
    "SessionConfig",
    "SessionPausedError",
    "PushResult",
    "open_session",
]
