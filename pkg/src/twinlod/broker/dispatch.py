"""Asynchronous notification delivery with bounded retry.

Deliveries never run on the mutating caller's thread: the broker enqueues
them here and a small worker pool drains the queue. Failed deliveries are
retried with exponential backoff (200 ms doubling, capped at 30 s) up to
5 attempts, giving at-least-once semantics; receivers must be idempotent
on (subscription id, notifiedAt).

Deliveries to the same endpoint are serialized in submission order (one
FIFO lane per endpoint URI); a retrying head-of-lane delivery holds back
later ones so receivers observe updates in the order they happened.
Distinct endpoints still proceed in parallel across the worker pool.

Endpoint URIs are dispatched by scheme: ``http``/``https`` POST the
notification document; ``local://<name>`` invokes a callable registered
in-process, which is how same-process subscribers (flow engines, the
relay, the request processor) receive notifications without a socket.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable
from urllib.parse import urlparse

import requests

log = logging.getLogger(__name__)

DEFAULT_MAX_ATTEMPTS = 5
DEFAULT_BASE_DELAY_S = 0.2
DEFAULT_MAX_DELAY_S = 30.0


@dataclass
class _Task:
    due: float
    seq: int
    endpoint: str
    payload: dict
    attempts: int = 0
    on_attempt: Callable[[bool], None] | None = None
    on_done: Callable[[bool, int], None] | None = None


class NotificationDispatcher:
    """Background delivery queue shared by one broker instance."""

    def __init__(
        self,
        max_attempts: int = DEFAULT_MAX_ATTEMPTS,
        base_delay_s: float = DEFAULT_BASE_DELAY_S,
        max_delay_s: float = DEFAULT_MAX_DELAY_S,
        workers: int = 4,
        http_timeout_s: float = 5.0,
    ):
        self.max_attempts = max_attempts
        self.base_delay_s = base_delay_s
        self.max_delay_s = max_delay_s
        self.http_timeout_s = http_timeout_s
        self._local: dict[str, Callable[[dict], Any]] = {}
        # One FIFO lane per endpoint; the ready heap holds (due, seq, endpoint)
        # for lane heads that are due and not currently being attempted.
        self._lanes: dict[str, deque[_Task]] = {}
        self._ready: list[tuple[float, int, str]] = []
        self._seq = itertools.count()
        self._lock = threading.Lock()
        self._wakeup = threading.Condition(self._lock)
        self._idle = threading.Condition(self._lock)
        self._outstanding = 0
        self._stopped = False
        self._session = requests.Session()
        self._threads = [
            threading.Thread(target=self._run, name=f"dispatch-{i}", daemon=True)
            for i in range(workers)
        ]
        for t in self._threads:
            t.start()

    # --- local endpoint registry ---

    def register_local(self, name: str, handler: Callable[[dict], Any]) -> str:
        """Register an in-process notification receiver; returns its URI."""
        self._local[name] = handler
        return f"local://{name}"

    def resolve_local(self, uri: str) -> Callable[[dict], Any] | None:
        parsed = urlparse(uri)
        return self._local.get(parsed.netloc + parsed.path.rstrip("/"))

    # --- submission ---

    def submit(
        self,
        endpoint: str,
        payload: dict,
        on_attempt: Callable[[bool], None] | None = None,
        on_done: Callable[[bool, int], None] | None = None,
    ) -> None:
        """Queue one delivery; returns immediately."""
        with self._lock:
            if self._stopped:
                raise RuntimeError("dispatcher stopped")
            task = _Task(
                due=time.monotonic(),
                seq=next(self._seq),
                endpoint=endpoint,
                payload=payload,
                on_attempt=on_attempt,
                on_done=on_done,
            )
            self._outstanding += 1
            lane = self._lanes.setdefault(endpoint, deque())
            lane.append(task)
            # A longer lane means the head is already queued or in flight.
            if len(lane) == 1:
                heapq.heappush(self._ready, (task.due, task.seq, endpoint))
                self._wakeup.notify()

    def wait_idle(self, timeout_s: float = 30.0) -> bool:
        """Block until every queued delivery has finished (or given up)."""
        deadline = time.monotonic() + timeout_s
        with self._lock:
            while self._outstanding > 0:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return False
                self._idle.wait(remaining)
        return True

    def stop(self):
        with self._lock:
            self._stopped = True
            self._wakeup.notify_all()

    # --- delivery loop ---

    def _attempt(self, task: _Task) -> bool:
        endpoint = task.endpoint
        scheme = urlparse(endpoint).scheme
        try:
            if scheme == "local":
                handler = self.resolve_local(endpoint)
                if handler is None:
                    raise LookupError(f"no local receiver registered for {endpoint}")
                handler(task.payload)
                return True
            resp = self._session.post(endpoint, json=task.payload, timeout=self.http_timeout_s)
            return 200 <= resp.status_code < 300
        except Exception as exc:  # noqa: BLE001 - any delivery failure is retried
            log.debug("delivery to %s failed: %s", endpoint, exc)
            return False

    def _run(self):
        while True:
            with self._lock:
                while not self._stopped and (
                    not self._ready or self._ready[0][0] > time.monotonic()
                ):
                    delay = None
                    if self._ready:
                        delay = max(0.0, self._ready[0][0] - time.monotonic())
                    self._wakeup.wait(timeout=delay if delay is not None else 0.5)
                if self._stopped:
                    return
                _, _, endpoint = heapq.heappop(self._ready)
                task = self._lanes[endpoint][0]
            # The lane head stays in place while being attempted, so no other
            # worker can pick this endpoint up until we re-arm it below.
            ok = self._attempt(task)
            task.attempts += 1
            if task.on_attempt is not None:
                task.on_attempt(ok)
            done = ok or task.attempts >= self.max_attempts
            if done:
                if not ok:
                    log.warning(
                        "giving up on notification to %s after %d attempts",
                        task.endpoint,
                        task.attempts,
                    )
                if task.on_done is not None:
                    task.on_done(ok, task.attempts)
            with self._lock:
                lane = self._lanes[task.endpoint]
                if done:
                    lane.popleft()
                    self._outstanding -= 1
                    if self._outstanding == 0:
                        self._idle.notify_all()
                    if not lane:
                        del self._lanes[task.endpoint]
                        continue
                    nxt = lane[0]
                    heapq.heappush(self._ready, (nxt.due, nxt.seq, task.endpoint))
                else:
                    backoff = min(self.base_delay_s * (2 ** (task.attempts - 1)), self.max_delay_s)
                    task.due = time.monotonic() + backoff
                    heapq.heappush(self._ready, (task.due, task.seq, task.endpoint))
                self._wakeup.notify()
