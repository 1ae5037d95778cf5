"""Batch annotation: prompting, self-correction, retries, caching and cost."""
from __future__ import annotations

import json
import logging
import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .live import TransportError
from .parsing import ParseFailure, aggregate_hybrid, parse_response
from .prompts import PromptStrategy, build_prompt, build_self_correction_prompt
from .types import ABSTAIN, Annotation, CostReport

log = logging.getLogger(__name__)

DEFAULT_PROMPT_PRICE = 0.5e-6
DEFAULT_COMPLETION_PRICE = 1.5e-6


class BudgetExceeded(RuntimeError):
    """Spend cap reached. Completed annotations are already in the cache."""

    def __init__(self, message, annotations, cost):
        super().__init__(message)
        self.annotations = annotations
        self.cost = cost


@dataclass(frozen=True)
class Request:
    prompt: str
    temperature: float
    node_id: int
    query: int = 0
    attempt: int = 0
    top_k: int = 1


def estimate_tokens(text: str) -> int:
    """Four characters per token, rounded up."""
    return math.ceil(len(text) / 4)


def estimate_cost(prompts, completions, prices=(DEFAULT_PROMPT_PRICE, DEFAULT_COMPLETION_PRICE)) -> CostReport:
    p_tok = sum(estimate_tokens(p) for p in prompts)
    c_tok = sum(estimate_tokens(c) for c in completions)
    return CostReport(p_tok, c_tok, p_tok * prices[0] + c_tok * prices[1], requests=len(prompts))


class AnnotationCache:
    """Append-only JSONL store keyed by ``(node_id, strategy tag)``.

    ``header`` (a dict) is written as the first line of a new file and
    exposed as ``.header`` when an existing file is reopened.
    """

    def __init__(self, path, class_names, header: dict | None = None):
        self.path = Path(path)
        self.class_names = list(class_names)
        self._index = {c: i for i, c in enumerate(self.class_names)}
        self._items: dict = {}
        self.header = header
        if self.path.is_file():
            with self.path.open(encoding="utf-8") as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    obj = json.loads(line)
                    if "header" in obj:
                        self.header = obj["header"]
                        continue
                    a = self._decode(obj)
                    self._items[(a.node_id, a.strategy)] = a

    def _decode(self, obj) -> Annotation:
        label = obj.get("label")
        idx = ABSTAIN if label is None else self._index[label]
        return Annotation(int(obj["node_id"]), idx, float(obj["confidence"]), tuple(obj.get("raw", ())),
                          obj.get("strategy", ""), int(obj.get("attempts", 1)), bool(obj.get("simulated", False)))

    def _encode(self, a: Annotation) -> dict:
        return {"node_id": a.node_id, "label": None if a.abstained else self.class_names[a.label_index],
                "confidence": a.confidence, "strategy": a.strategy, "attempts": a.attempts,
                "raw": list(a.raw_responses), "simulated": a.is_simulated}

    def get(self, node_id, strategy_tag):
        return self._items.get((int(node_id), strategy_tag))

    def __len__(self):
        return len(self._items)

    def values(self):
        return list(self._items.values())

    def extend(self, annotations):
        fresh = [a for a in annotations if (a.node_id, a.strategy) not in self._items]
        if not fresh:
            return
        self.path.parent.mkdir(parents=True, exist_ok=True)
        new_file = not self.path.is_file()
        with self.path.open("a", encoding="utf-8") as fh:
            if new_file and self.header is not None:
                fh.write(json.dumps({"header": self.header}, sort_keys=True) + "\n")
            for a in fresh:
                fh.write(json.dumps(self._encode(a), sort_keys=True) + "\n")
                self._items[(a.node_id, a.strategy)] = a


class _Meter:
    def __init__(self, prices, max_dollars):
        self.prices = prices
        self.max_dollars = max_dollars
        self.cost = CostReport()
        self.lock = threading.Lock()

    def over_cap(self) -> bool:
        return self.max_dollars is not None and self.cost.dollars_estimate >= self.max_dollars

    def charge(self, prompt, completion, retry):
        p, c = estimate_tokens(prompt), estimate_tokens(completion)
        with self.lock:
            self.cost.prompt_tokens_estimate += p
            self.cost.completion_tokens_estimate += c
            self.cost.dollars_estimate = (self.cost.prompt_tokens_estimate * self.prices[0]
                                          + self.cost.completion_tokens_estimate * self.prices[1])
            self.cost.requests += 1
            self.cost.retries += int(retry)


class _Aborted(Exception):
    pass


# the simulator ignores prompt content, so text-less nodes get a stand-in
NO_TEXT = "(no text available)"


def _node_text(graph, node) -> str:
    return graph.texts[node] if graph.texts else ""


def _annotate_node(backend, graph, node, strategy, max_retries, meter, transcript, sleep, backoff_base,
                   transport_retries):
    prompt = build_prompt(strategy, _node_text(graph, node).strip() or NO_TEXT, graph.class_names)
    k = strategy.top_k if strategy.asks_topk else 1
    raws, parsed, attempts = [], [], 0

    def call(text, temperature, query, attempt, is_retry):
        nonlocal attempts
        req = Request(text, temperature, node, query, attempt, k)
        for t in range(transport_retries + 1):
            if meter.over_cap():
                raise _Aborted()
            try:
                out = backend.complete(req)
            except TransportError as exc:
                attempts += 1
                meter.charge(text, "", is_retry or t > 0)
                if t == transport_retries:
                    log.warning("node %s: transport retries exhausted (%s)", node, exc)
                    return None
                sleep(backoff_base * 2 ** t)
                continue
            attempts += 1
            meter.charge(text, out, is_retry or t > 0)
            if transcript is not None:
                transcript.write(node, query, attempt, temperature, text, out)
            return out
        return None

    for q in range(strategy.queries):
        out = call(prompt, strategy.temperature_primary, q, 0, False)
        for attempt in range(max_retries + 1):
            if out is None:
                break
            raws.append(out)
            try:
                parsed.append(parse_response(out, graph.class_names))
                break
            except ParseFailure as failure:
                if attempt == max_retries:
                    break
                fix = build_self_correction_prompt(prompt, out, failure, graph.class_names)
                out = call(fix, strategy.temperature_correction, q, attempt + 1, True)
    sim = bool(getattr(backend, "is_simulated", False))
    result = aggregate_hybrid(parsed)
    if result is None:
        return Annotation.abstain(node, raws, strategy.tag, attempts, sim)
    label, conf = result
    return Annotation(int(node), int(label), float(conf), tuple(raws), strategy.tag, max(1, attempts), sim)


class Transcript:
    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def write(self, node, query, attempt, temperature, prompt, response):
        rec = {"node_id": int(node), "query": query, "attempt": attempt, "temperature": temperature,
               "prompt": prompt, "response": response}
        with self._lock, self.path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(rec) + "\n")


def annotate_batch(backend, graph, node_ids, strategy: PromptStrategy, max_retries: int = 3,
                   concurrency_limit: int = 4, cache: AnnotationCache | None = None,
                   prices=(DEFAULT_PROMPT_PRICE, DEFAULT_COMPLETION_PRICE), max_dollars: float | None = None,
                   transcript: Transcript | None = None, sleep=time.sleep, backoff_base: float = 1.0,
                   transport_retries: int = 4):
    """Annotate ``node_ids`` and return ``(annotations, cost_report)``.

    Nodes found in ``cache`` issue no requests. Replies that fail to parse
    are repaired with the self-correction prompt up to ``max_retries``
    times; transport errors back off exponentially. Either way, a node
    that still has no usable reply comes back as ABSTAIN. Fresh results
    are appended to the cache before returning. Crossing ``max_dollars``
    raises :class:`BudgetExceeded` after caching what finished.
    """
    node_ids = [int(n) for n in node_ids]
    meter = _Meter(prices, max_dollars)
    results: dict = {}
    todo = []
    for n in node_ids:
        hit = cache.get(n, strategy.tag) if cache is not None else None
        if hit is not None:
            results[n] = hit
        elif n not in results:
            todo.append(n)
    todo = list(dict.fromkeys(todo))
    if not getattr(backend, "is_simulated", False):
        blank = [n for n in todo if not _node_text(graph, n).strip()]
        if blank:
            raise ValueError(f"{len(blank)} selected nodes have no text (first: {blank[0]}); "
                             "a live annotator needs node text")

    def work(n):
        return _annotate_node(backend, graph, n, strategy, max_retries, meter, transcript, sleep,
                              backoff_base, transport_retries)

    aborted = False
    step = max(1, concurrency_limit)
    with ThreadPoolExecutor(max_workers=step) as pool:
        for lo in range(0, len(todo), step):
            chunk = todo[lo:lo + step]
            fresh = []
            for n, fut in zip(chunk, [pool.submit(work, n) for n in chunk]):
                try:
                    fresh.append(fut.result())
                except _Aborted:
                    aborted = True
            if cache is not None:
                cache.extend(fresh)
            results.update({a.node_id: a for a in fresh})
            if aborted or (meter.over_cap() and lo + step < len(todo)):
                done = [results[n] for n in node_ids if n in results]
                raise BudgetExceeded(f"spend cap ${max_dollars:.4f} reached after "
                                     f"{meter.cost.requests} requests", done, meter.cost)
    usage = getattr(backend, "usage", None)
    if usage:
        meter.cost.provider_prompt_tokens = usage.get("prompt_tokens", 0)
        meter.cost.provider_completion_tokens = usage.get("completion_tokens", 0)
    return [results[n] for n in node_ids], meter.cost
