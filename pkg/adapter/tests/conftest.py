from __future__ import annotations

from pathlib import Path

import pytest

from mmcoir_adapter import AdapterConfig, make_server, serve_forever_in_thread

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def adapter():
    cfg = AdapterConfig(dim=384)
    server = make_server(cfg)
    serve_forever_in_thread(server)
    host, port = server.server_address
    yield f"http://{host}:{port}/embed", cfg
    server.shutdown()
