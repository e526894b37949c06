"""Classifier adapters behind :class:`~glyphguard.attackkit.ClassifierHandle`.

``RemoteAdapter`` speaks the batch JSON protocol::

    POST {base_url}/predict   {"texts": ["...", ...]}
    200                       {"probs": [[p1, ..., pk], ...]}

:func:`make_server` exposes any handle over the same protocol.
"""
from __future__ import annotations

import json
import logging
import socket
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Mapping, Sequence

import numpy as np
import requests

from ._validation import check_probabilities
from .attackkit import ClassifierHandle

logger = logging.getLogger(__name__)


class TransportError(ConnectionError):
    pass


class ProtocolError(ValueError):
    pass


class LocalAdapter(ClassifierHandle):
    """Scores texts with a fitted :class:`~glyphguard.fusionnet.FusionClassifier`.

    Texts are evaluated in chunks of ``batch_size`` so that a remote client
    using the same chunk size reproduces the exact same floating point values.
    """

    def __init__(self, model, batch_size: int = 64):
        super().__init__()
        self.model = model
        self.batch_size = batch_size
        self._model_lock = threading.Lock()

    @property
    def n_classes(self) -> int:
        return self.model.config_.n_classes

    def _predict_probs(self, texts):
        out = []
        with self._model_lock:
            for start in range(0, len(texts), self.batch_size):
                out.append(self.model.predict_proba(texts[start:start + self.batch_size]))
        return np.concatenate(out)


def local_adapter(model, batch_size: int = 64) -> LocalAdapter:
    return LocalAdapter(model, batch_size)


class LinearOracleAdapter(ClassifierHandle):
    """Bag-of-characters softmax classifier: logits are summed per-character weights.

    Characters missing from ``weights`` contribute nothing, so the empty text
    scores uniformly.
    """

    def __init__(self, weights: Mapping[int, Sequence[float]]):
        super().__init__()
        if not weights:
            raise ValueError("weights must be nonempty")
        self.weights = {int(k): np.asarray(v, dtype=np.float64) for k, v in weights.items()}
        self._k = len(next(iter(self.weights.values())))
        if any(v.shape != (self._k,) for v in self.weights.values()):
            raise ValueError("weight vectors differ in length")
        self._zero = np.zeros(self._k)

    @property
    def n_classes(self) -> int:
        return self._k

    def logits(self, text: str) -> np.ndarray:
        z = np.zeros(self._k)
        for ch in text:
            z = z + self.weights.get(ord(ch), self._zero)
        return z

    def _predict_probs(self, texts):
        z = np.array([self.logits(t) for t in texts])
        z -= z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)


def linear_oracle_adapter(weights) -> LinearOracleAdapter:
    return LinearOracleAdapter(weights)


class RemoteAdapter(ClassifierHandle):
    def __init__(self, base_url: str, timeout: float = 10.0, max_batch: int = 64, retries: int = 3,
                 backoff: float = 0.05, max_in_flight: int = 4, n_classes: int | None = None):
        super().__init__()
        self.url = base_url.rstrip("/") + "/predict"
        self.timeout = timeout
        self.max_batch = max_batch
        self.retries = retries
        self.backoff = backoff
        self._n_classes = n_classes
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._local = threading.local()

    @property
    def n_classes(self) -> int:
        if self._n_classes is None:
            raise ProtocolError("class count unknown until the first response")
        return self._n_classes

    def _session(self) -> requests.Session:
        if not hasattr(self._local, "session"):
            self._local.session = requests.Session()
        return self._local.session

    def _post(self, texts: list[str]) -> list:
        body = json.dumps({"texts": texts}, ensure_ascii=False).encode("utf-8")
        headers = {"Content-Type": "application/json; charset=utf-8"}
        last = None
        for attempt in range(self.retries + 1):
            try:
                with self._slots:
                    resp = self._session().post(self.url, data=body, headers=headers, timeout=self.timeout)
                if resp.status_code == 200:
                    try:
                        return resp.json()["probs"]
                    except (ValueError, KeyError, TypeError) as exc:
                        raise ProtocolError(f"malformed response from {self.url}: {exc}") from exc
                last = TransportError(f"{self.url} answered HTTP {resp.status_code}")
            except requests.RequestException as exc:
                last = TransportError(f"{self.url}: {exc}")
            if attempt < self.retries:
                time.sleep(self.backoff * 2 ** attempt)
        raise last

    def _predict_probs(self, texts):
        out = []
        for start in range(0, len(texts), self.max_batch):
            chunk = texts[start:start + self.max_batch]
            rows = self._post(chunk)
            try:
                probs = check_probabilities(np.array(rows, dtype=np.float64), len(chunk), tol=1e-4)
            except (ValueError, TypeError) as exc:
                raise ProtocolError(f"bad probabilities from {self.url}: {exc}") from exc
            if self._n_classes is None:
                self._n_classes = probs.shape[1]
            elif probs.shape[1] != self._n_classes:
                raise ProtocolError(f"expected {self._n_classes} classes, got {probs.shape[1]}")
            out.append(probs)
        return np.concatenate(out)

    def predict_probs(self, texts):
        texts = list(texts)
        if not texts:
            return np.zeros((0, self._n_classes or 0))
        return super().predict_probs(texts)


def remote_adapter(base_url: str, timeout: float = 10.0, max_batch: int = 64, **kw) -> RemoteAdapter:
    return RemoteAdapter(base_url, timeout, max_batch, **kw)


# ---------------------------------------------------------------------------
# server

def _handler_for(handle: ClassifierHandle):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def setup(self):
            super().setup()
            # headers and body go out as separate writes; without this each reply stalls on delayed ACK
            self.connection.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

        def _reply(self, status, obj):
            data = json.dumps(obj).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json; charset=utf-8")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def do_POST(self):
            if self.path.rstrip("/") != "/predict":
                self._reply(404, {"error": "not found"})
                return
            try:
                n = int(self.headers.get("Content-Length", 0))
                texts = json.loads(self.rfile.read(n).decode("utf-8"))["texts"]
                if not isinstance(texts, list) or not all(isinstance(t, str) for t in texts):
                    raise ValueError("texts must be a list of strings")
            except (ValueError, KeyError, TypeError) as exc:
                self._reply(400, {"error": str(exc)})
                return
            try:
                probs = handle.predict_probs(texts)
            except ValueError as exc:
                self._reply(422, {"error": str(exc)})
                return
            self._reply(200, {"probs": np.asarray(probs, dtype=np.float64).tolist()})

        def log_message(self, fmt, *args):
            logger.debug("%s - " + fmt, self.address_string(), *args)

    return Handler


def make_server(handle: ClassifierHandle, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    server = ThreadingHTTPServer((host, port), _handler_for(handle))
    server.daemon_threads = True
    return server


def serve_in_thread(handle: ClassifierHandle, host: str = "127.0.0.1", port: int = 0):
    """Start a server on a daemon thread; returns (server, base_url)."""
    server = make_server(handle, host, port)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    h, p = server.server_address[:2]
    return server, f"http://{h}:{p}"
