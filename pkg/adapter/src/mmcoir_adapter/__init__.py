"""Reference embedding-backend server for the retrieval engine's wire protocol."""

from .config import AdapterConfig, Pooling
from .server import make_server, serve_forever_in_thread

__version__ = "0.1.0"

__all__ = ["AdapterConfig", "Pooling", "make_server", "serve_forever_in_thread", "__version__"]
