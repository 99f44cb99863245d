"""Local HTTP judge used by the transport tests."""

import json
import re
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from mofg.judge import extract_verdict


class MockJudge:
    """Replies like a competent judge; can be told to stall, fail or garble.

    ``script`` is a list consumed one entry per request: "ok", "slow",
    "error" (HTTP 500), "garbage" (non-JSON body). Once exhausted every
    request is "ok" (or ``default``).
    """

    def __init__(self, script=(), default="ok", delay=1.0):
        self.script = list(script)
        self.default = default
        self.delay = delay
        self.requests = []
        self.lock = threading.Lock()
        self.in_flight = 0
        self.max_seen = 0
        judge = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                with judge.lock:
                    judge.requests.append(body)
                    mode = judge.script.pop(0) if judge.script else judge.default
                    judge.in_flight += 1
                    judge.max_seen = max(judge.max_seen, judge.in_flight)
                try:
                    if mode == "slow":
                        time.sleep(judge.delay)
                    if mode == "error":
                        self.send_response(500)
                        self.end_headers()
                        return
                    if mode == "hold":
                        time.sleep(0.05)
                    payload = b"<html>oops" if mode == "garbage" else json.dumps(
                        {"verdict": judge.decide(body["prompt"])}).encode()
                    self.send_response(200)
                    self.send_header("Content-Type", "application/json")
                    self.send_header("Content-Length", str(len(payload)))
                    self.end_headers()
                    self.wfile.write(payload)
                finally:
                    with judge.lock:
                        judge.in_flight -= 1

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    @staticmethod
    def decide(prompt):
        ref = re.search(r"Reference answer: (.*)", prompt).group(1)
        hyp = re.search(r"Predicted answer: (.*)", prompt).group(1)
        h, r = extract_verdict(hyp), extract_verdict(ref)
        return "yes" if h is not None and h == r else "no"

    @property
    def url(self):
        host, port = self.server.server_address
        return f"http://{host}:{port}/judge"

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()
