"""HTTP and websocket service over the fleet library."""

from .app import build_live_fleet, create_app
from .bridge import ConsoleHub, LiveFleet, error_code
from .schemas import PROTOCOL_VERSION, parse_client_message

__all__ = [
    "PROTOCOL_VERSION",
    "ConsoleHub",
    "LiveFleet",
    "build_live_fleet",
    "create_app",
    "error_code",
    "parse_client_message",
]
