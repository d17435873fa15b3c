"""Shared fixtures: deterministic images and a live server per model."""

import socket
import threading
import time

import numpy as np
import pytest
import uvicorn

from hagxai_server.app import create_app


def synthetic_image(seed=0, h=64, w=80):
    """Structured random RGB image (blocks + noise) so scores vary spatially."""
    rng = np.random.default_rng(seed)
    img = rng.integers(0, 100, size=(h, w, 3), dtype=np.uint8)
    img[h // 4 : h // 2, w // 4 : w // 2] = rng.integers(150, 256, size=3, dtype=np.uint8)
    img[h // 2 : 3 * h // 4, w // 2 :] = rng.integers(150, 256, size=3, dtype=np.uint8)
    return img


@pytest.fixture
def image():
    return synthetic_image(0)


class LiveServer:
    def __init__(self, model_id):
        with socket.socket() as s:
            s.bind(("127.0.0.1", 0))
            self.port = s.getsockname()[1]
        self.url = f"http://127.0.0.1:{self.port}"
        config = uvicorn.Config(create_app(model_id), host="127.0.0.1", port=self.port, log_level="error")
        self.server = uvicorn.Server(config)
        self.thread = threading.Thread(target=self.server.run, daemon=True)

    def start(self):
        self.thread.start()
        deadline = time.time() + 10
        while not self.server.started:
            if time.time() > deadline:
                raise RuntimeError("server failed to start")
            time.sleep(0.02)
        return self

    def stop(self):
        self.server.should_exit = True
        self.thread.join(timeout=5)


@pytest.fixture(scope="session")
def det_server():
    server = LiveServer("tiny-det").start()
    yield server
    server.stop()


@pytest.fixture(scope="session")
def cls_server():
    server = LiveServer("tiny-cls").start()
    yield server
    server.stop()
