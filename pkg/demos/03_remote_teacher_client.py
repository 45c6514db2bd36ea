"""The remote teacher client, demonstrated against a throwaway local server.

No real endpoint is needed: a scripted HTTP server stands in for the teacher
so the client's moving parts are visible — prompt rendering, bounded
parallelism, the on-disk completion cache, and retries with backoff. Watch
the request counter: the second extraction round costs zero network calls
because every completion is already cached, and a flaky round trips the
retry loop instead of failing.
"""

import json
import os
import tempfile
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from stepdistill.data import solve_arithmetic
from stepdistill.teacher import (
    ARITHMETIC_TEMPLATE,
    RemoteTeacherConfig,
    build_prompt,
    remote_teach,
)


class ScriptedTeacher(BaseHTTPRequestHandler):
    """Answers every prompt correctly by solving the last Q: line itself."""

    def do_POST(self):
        server = self.server
        server.request_count += 1
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        if server.fail_next > 0:
            server.fail_next -= 1
            self.send_response(503)
            self.end_headers()
            return
        question = body["prompt"].splitlines()[-2].removeprefix("Q: ")
        steps, label = solve_arithmetic(question)
        completion = f"{' ; '.join(steps)}\nA: {label}"
        payload = json.dumps({"completion": completion}).encode()
        self.send_response(200)
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


server = ThreadingHTTPServer(("127.0.0.1", 0), ScriptedTeacher)
server.request_count = 0
server.fail_next = 0
threading.Thread(target=server.serve_forever, daemon=True).start()
os.environ.setdefault("TEACHER_API_TOKEN", "demo-token")

with tempfile.TemporaryDirectory() as cache_dir:
    config = RemoteTeacherConfig(
        endpoint=f"http://127.0.0.1:{server.server_address[1]}/v1/complete",
        cache_dir=cache_dir,
        max_parallel=4,
        max_retries=3,
        backoff_base=0.05,
    )

    inputs = ["7 − 2 × 3", "4 + 5 × 2", "9 − 3 − 3", "2 × 2 × 2"]

    print("=== the rendered prompt for the first input ===")
    print(build_prompt(ARITHMETIC_TEMPLATE, inputs[0]))

    print("\n=== first extraction round (cold cache) ===")
    for x, out in remote_teach(config, ARITHMETIC_TEMPLATE, inputs):
        print(f"{x}  ->  label {out.label!r}, rationale {out.rationale!r}")
    print(f"network requests so far: {server.request_count}")

    print("\n=== second round: same inputs, warm cache ===")
    before = server.request_count
    remote_teach(config, ARITHMETIC_TEMPLATE, inputs)
    print(f"additional network requests: {server.request_count - before}")

    print("\n=== a flaky endpoint: two 503s, then success ===")
    server.fail_next = 2
    results = remote_teach(config, ARITHMETIC_TEMPLATE, ["8 − 1 × 5"])
    print(f"label {results[0][1].label!r} after "
          f"{server.request_count - before} request(s) for one input "
          "(two failures retried, then the answer)")

server.shutdown()
