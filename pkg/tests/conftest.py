import socket
from pathlib import Path

import pytest

DATA = Path(__file__).resolve().parents[1] / "src" / "fairprompt" / "data"


class _NoNetwork(socket.socket):
    def connect(self, *args, **kwargs):
        raise RuntimeError("tests must not touch the network")


@pytest.fixture(autouse=True)
def no_network(monkeypatch, request):
    if request.node.get_closest_marker("live"):
        return
    monkeypatch.setattr(socket, "socket", _NoNetwork)


def pytest_configure(config):
    config.addinivalue_line("markers", "live: talks to a real provider; skipped without credentials")


@pytest.fixture
def data_dir() -> Path:
    return DATA
