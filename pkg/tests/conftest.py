import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pegmate.worldgen import ShapeItem, make_shape, render_shape_views

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=500, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_render():
    from pegmate.worldgen import RenderConfig
    return RenderConfig(mm_per_pixel=0.15, width=800, height=720)


@pytest.fixture(scope="session")
def panel(small_render):
    """Five worlds on one cluttered board and their rendered scenes."""
    from pegmate.worldgen import make_panel, render_panel
    worlds = make_panel(5, seed=3, clutter=2)
    return worlds, render_panel(worlds, small_render)


class MockVLM:
    """Chat-completions stand-in; behaviour is switched through attributes between requests."""

    def __init__(self):
        self.mode = "ok"  # ok | no_logprobs | fail | bad_json | status400
        self.verdict = "Yes"
        self.probability = 0.8
        self.requests = []
        self.headers = []

    def reply(self):
        import math
        p = self.probability
        other = "No" if self.verdict == "Yes" else "Yes"
        choice = {"index": 0, "message": {"role": "assistant", "content": self.verdict}}
        if self.mode != "no_logprobs":
            choice["logprobs"] = {"content": [{
                "token": self.verdict, "logprob": math.log(p),
                "top_logprobs": [
                    {"token": self.verdict, "logprob": math.log(p)},
                    {"token": other, "logprob": math.log(1 - p)},
                    {"token": "Maybe", "logprob": -30.0},
                ],
            }]}
        return {"id": "mock", "object": "chat.completion", "choices": [choice]}


@pytest.fixture
def vlm_server():
    import json
    import threading
    from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

    state = MockVLM()

    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args):
            pass

        def do_POST(self):
            n = int(self.headers.get("Content-Length", 0))
            state.requests.append(json.loads(self.rfile.read(n)))
            state.headers.append(dict(self.headers))
            if state.mode == "fail":
                self.send_response(503)
                self.end_headers()
                return
            if state.mode == "status400":
                self.send_response(400)
                self.end_headers()
                self.wfile.write(b"bad request")
                return
            body = b"not json" if state.mode == "bad_json" else json.dumps(state.reply()).encode()
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

    server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    state.url = f"http://127.0.0.1:{server.server_address[1]}/v1/chat/completions"
    try:
        yield state
    finally:
        server.shutdown()
        server.server_close()


def single_hole_candidate(hole, yaw_deg, mm_per_pixel=0.15):
    """Top-view-only candidate of ``hole`` (hole frame) turned to ``yaw_deg``, with ground truth attached."""
    from pegmate.detection import HoleCandidate

    top = render_shape_views(hole.rotated(yaw_deg), "hole", mm_per_pixel)["top"]
    truth = {"polygon_local_mm": hole.vertices.tolist(), "pose_world": {"x": 0.0, "y": 0.0, "yaw": yaw_deg}}
    return HoleCandidate(0, {}, {"top": top}, {"top": top == 40}, {}, np.zeros((1, 3)), np.zeros(3), truth)


def peg_item(spec):
    poly = make_shape(spec)
    return ShapeItem(0, spec.family, poly, spec, render_shape_views(poly, "peg"))


@pytest.fixture
def hole_candidate():
    return single_hole_candidate


@pytest.fixture
def make_peg():
    return peg_item


_ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """Record and assert one acceptance criterion: ``criterion(number, passed, detail)``."""
    def check(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        assert passed, line
    return check


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[k])
