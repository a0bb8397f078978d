import json
import subprocess
import sys

import pytest

from guardgen.bridge_client import BridgeConnection

from fixture_world import build_checkpoint


@pytest.fixture(scope="session")
def checkpoint(tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt")
    build_checkpoint(str(path))
    return path


def server_command(checkpoint_path, *extra):
    return [sys.executable, "-m", "modelbridge",
            "--checkpoint", str(checkpoint_path), *extra]


@pytest.fixture(scope="session")
def conn(checkpoint):
    connection = BridgeConnection.spawn(server_command(checkpoint))
    yield connection
    connection.close()


class RawServer:
    """Direct pipe access for testing error responses, which the client
    class turns into exceptions."""

    def __init__(self, process):
        self.process = process

    def ask(self, payload):
        line = payload if isinstance(payload, str) else json.dumps(payload)
        self.process.stdin.write(line + "\n")
        self.process.stdin.flush()
        return json.loads(self.process.stdout.readline())

    def close(self):
        self.process.terminate()
        self.process.wait(timeout=10)


@pytest.fixture(scope="session")
def raw(checkpoint):
    process = subprocess.Popen(server_command(checkpoint),
                               stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                               text=True, bufsize=1)
    server = RawServer(process)
    yield server
    server.close()
