"""Bounded-queue processor graph.

Each processor consumes its single input queue on one worker thread, so
per-processor ordering holds; a full downstream queue blocks the producer
(back-pressure, nothing dropped). Failed items go to the engine's
dead-letter sink and count as errored.
"""

from __future__ import annotations

import json
import queue
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from twinlod.errors import InvalidGraph
from twinlod.flow.engine import FlowEngine, HomogenizationRules, MappingRules
from twinlod.flow.records import FlowRecord

DEFAULT_QUEUE_CAPACITY = 1024

ProcessorFn = Callable[[Any], list[Any]]


@dataclass(frozen=True)
class ProcessorSpec:
    name: str
    kind: str
    config: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class ProcessorGraph:
    processors: tuple[ProcessorSpec, ...]
    connections: tuple[tuple[str, str], ...]
    queue_capacity: int = DEFAULT_QUEUE_CAPACITY

    def __post_init__(self):
        names = [p.name for p in self.processors]
        if len(set(names)) != len(names):
            raise InvalidGraph("duplicate processor names")
        known = set(names)
        for src, dst in self.connections:
            if src not in known or dst not in known:
                raise InvalidGraph(f"connection {src}->{dst} names a missing processor")
        self._check_acyclic(known)
        if self.queue_capacity < 1:
            raise InvalidGraph("queue capacity must be positive")

    def _check_acyclic(self, names: set[str]) -> None:
        indegree = {n: 0 for n in names}
        adjacency: dict[str, list[str]] = {n: [] for n in names}
        for src, dst in self.connections:
            adjacency[src].append(dst)
            indegree[dst] += 1
        ready = [n for n, d in indegree.items() if d == 0]
        seen = 0
        while ready:
            node = ready.pop()
            seen += 1
            for nxt in adjacency[node]:
                indegree[nxt] -= 1
                if indegree[nxt] == 0:
                    ready.append(nxt)
        if seen != len(names):
            raise InvalidGraph("graph contains a cycle")

    @classmethod
    def from_document(cls, doc: dict[str, Any]) -> "ProcessorGraph":
        # Connections accept both the pair form ["a", "b"] and {"from": "a", "to": "b"}.
        def edge(c: Any) -> tuple[str, str]:
            if isinstance(c, dict):
                return (c["from"], c["to"])
            src, dst = c
            return (src, dst)

        try:
            processors = tuple(
                ProcessorSpec(p["name"], p["kind"], p.get("config", {}))
                for p in doc.get("processors", ())
            )
            connections = tuple(edge(c) for c in doc.get("connections", ()))
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidGraph(f"malformed graph document: {exc}") from exc
        return cls(
            processors,
            connections,
            queue_capacity=int(doc.get("queue_capacity", DEFAULT_QUEUE_CAPACITY)),
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "ProcessorGraph":
        try:
            return cls.from_document(json.loads(Path(path).read_text("utf-8")))
        except (OSError, ValueError) as exc:
            raise InvalidGraph(f"cannot load graph {path}: {exc}") from exc


def _rules_config(config: dict[str, Any]) -> dict[str, Any]:
    # Accept rule keys either nested under "rules" or inline in the processor config.
    return config.get("rules", config)


def _build_processor(engine: FlowEngine, spec: ProcessorSpec) -> ProcessorFn:
    config = spec.config
    if spec.kind == "notification_ingress":
        return lambda item: list(engine.notification_ingress(item))
    if spec.kind == "to_smart_model":
        rules = HomogenizationRules.from_config(_rules_config(config))
        target = config.get("target_type", "")
        if not target:
            raise InvalidGraph(f"{spec.name}: to_smart_model needs target_type")
        return lambda item: [engine.to_smart_model(item, rules, target)]
    if spec.kind == "metadata":
        rules = MappingRules.from_config(_rules_config(config))
        return lambda item: [(item, engine.update_ckan_metadata(item, rules))]
    if spec.kind == "ckan":
        rules = MappingRules.from_config(_rules_config(config))

        def publish(item: Any) -> list[Any]:
            if isinstance(item, tuple):
                record, metadata = item
            else:
                record = item
                metadata = engine.update_ckan_metadata(record, rules)
            return [engine.ngsi_to_ckan(record, metadata, rules)]

        return publish
    if spec.kind == "history":
        def sink(item: Any) -> list[Any]:
            engine.history_sink(item)
            return [item]

        return sink
    raise InvalidGraph(f"{spec.name}: unknown processor kind {spec.kind!r}")


class _Worker:
    def __init__(
        self,
        spec: ProcessorSpec,
        fn: ProcessorFn,
        capacity: int,
        on_error: Callable[[Any, Exception], None],
    ):
        self.spec = spec
        self.fn = fn
        self.inbox: queue.Queue = queue.Queue(maxsize=capacity)
        self.downstream: list[_Worker] = []
        self.on_error = on_error
        self.records_in = 0
        self.records_out = 0
        self.errored = 0
        self._thread: threading.Thread | None = None
        self._running = False

    def start(self):
        self._running = True
        self._thread = threading.Thread(target=self._run, name=f"proc-{self.spec.name}", daemon=True)
        self._thread.start()

    def stop(self):
        self._running = False
        if self._thread is not None:
            self._thread.join(timeout=5.0)

    def _run(self):
        while self._running:
            try:
                item = self.inbox.get(timeout=0.05)
            except queue.Empty:
                continue
            try:
                self.records_in += 1
                try:
                    outputs = self.fn(item)
                except Exception as exc:  # noqa: BLE001 - dead-letter boundary
                    self.errored += 1
                    self.on_error(item, exc)
                    continue
                for out in outputs:
                    for worker in self.downstream:
                        worker.inbox.put(out)  # blocks when full: back-pressure
                    self.records_out += 1
            finally:
                # downstream puts happen before this task_done, so a drain
                # scan can never observe a record in neither queue
                self.inbox.task_done()

    @property
    def idle(self) -> bool:
        with self.inbox.mutex:
            return self.inbox.unfinished_tasks == 0


class GraphHandle:
    def __init__(self, engine: FlowEngine, graph: ProcessorGraph):
        self.engine = engine
        self.graph = graph
        self._collected: dict[str, list[Any]] = {}
        self._workers: dict[str, _Worker] = {}
        for spec in graph.processors:
            if spec.kind == "collect":
                bucket: list[Any] = []
                self._collected[spec.name] = bucket
                fn = self._collector(bucket)
            else:
                fn = _build_processor(engine, spec)
            self._workers[spec.name] = _Worker(spec, fn, graph.queue_capacity, engine.dead_letter)
        for src, dst in graph.connections:
            self._workers[src].downstream.append(self._workers[dst])
        self._topo_order = self._topological_names()
        self._started = False

    def _topological_names(self) -> list[str]:
        indegree = {p.name: 0 for p in self.graph.processors}
        for _, dst in self.graph.connections:
            indegree[dst] += 1
        order: list[str] = []
        ready = sorted(n for n, d in indegree.items() if d == 0)
        while ready:
            node = ready.pop(0)
            order.append(node)
            for worker in self._workers[node].downstream:
                indegree[worker.spec.name] -= 1
                if indegree[worker.spec.name] == 0:
                    ready.append(worker.spec.name)
        return order

    @staticmethod
    def _collector(bucket: list[Any]) -> ProcessorFn:
        lock = threading.Lock()

        def collect(item: Any) -> list[Any]:
            with lock:
                bucket.append(item)
            return []

        return collect

    def start(self) -> "GraphHandle":
        for worker in self._workers.values():
            worker.start()
        self._started = True
        return self

    def stop(self):
        for worker in self._workers.values():
            worker.stop()
        self._started = False

    def offer(self, processor_name: str, item: Any, timeout_s: float | None = None) -> bool:
        """Queue one item; blocks while the inbox is full (back-pressure).

        Returns False only when a timeout was given and expired.
        """
        worker = self._workers.get(processor_name)
        if worker is None:
            raise InvalidGraph(f"no processor named {processor_name!r}")
        try:
            worker.inbox.put(item, timeout=timeout_s)
        except queue.Full:
            return False
        return True

    def drain(self, timeout_s: float = 30.0) -> bool:
        """Block until every queue is empty and every worker is idle.

        Workers are scanned sources-first: records only travel downstream,
        so anything in flight from an already-checked worker lands in a
        queue the scan has not reached yet.
        """
        deadline = time.monotonic() + timeout_s
        while time.monotonic() < deadline:
            if all(self._workers[name].idle for name in self._topo_order):
                return True
            time.sleep(0.005)
        return False

    def counters(self) -> dict[str, dict[str, int]]:
        return {
            name: {"in": w.records_in, "out": w.records_out, "errored": w.errored}
            for name, w in self._workers.items()
        }

    def collected(self, processor_name: str) -> list[Any]:
        if processor_name not in self._collected:
            raise InvalidGraph(f"{processor_name!r} is not a collect processor")
        return list(self._collected[processor_name])


def run_graph(engine: FlowEngine, graph: ProcessorGraph) -> GraphHandle:
    return GraphHandle(engine, graph).start()
