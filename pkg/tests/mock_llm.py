"""A scriptable OpenAI-style chat-completions server running in a thread."""

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


def completion(content):
    return 200, json.dumps({"choices": [{"message": {"role": "assistant", "content": content}}]})


class MockLLM:
    """Replies come from ``script`` (a list of (status, body)) and then ``default``.

    ``default`` may be a callable taking the request JSON and returning (status, body).
    """

    def __init__(self, script=(), default=None):
        self.script = list(script)
        self.default = default or (lambda req: completion("faithful"))
        self.requests = []
        self.lock = threading.Lock()
        self.active = 0
        self.peak = 0
        mock = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                raw = self.rfile.read(int(self.headers.get("Content-Length", 0)))
                with mock.lock:
                    mock.active += 1
                    mock.peak = max(mock.peak, mock.active)
                    mock.requests.append(
                        {"path": self.path, "headers": dict(self.headers), "raw": raw.decode()}
                    )
                    step = mock.script.pop(0) if mock.script else None
                try:
                    status, body = step if step else mock.default(json.loads(raw))
                    data = body.encode()
                    self.send_response(status)
                    self.send_header("Content-Type", "application/json")
                    self.send_header("Content-Length", str(len(data)))
                    self.end_headers()
                    self.wfile.write(data)
                finally:
                    with mock.lock:
                        mock.active -= 1

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.server.server_port}"
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()
