"""Extract (label, confidence) answers from raw model output and combine
repeated queries."""
from __future__ import annotations

import ast
import json
import re

_PUNCT = re.compile(r"[^0-9a-z]+")
_NUMBER = re.compile(r"-?\d+(?:\.\d+)?")


class ParseFailure(ValueError):
    """Raw output could not be turned into valid answers.

    ``kind`` is one of ``no_json``, ``invalid_label`` or ``empty``;
    ``answer`` holds the offending label text for ``invalid_label``.
    """

    def __init__(self, kind: str, message: str = "", answer: str | None = None):
        super().__init__(message or kind)
        self.kind = kind
        self.answer = answer


def normalize_label(text) -> str:
    return _PUNCT.sub(" ", str(text).lower()).strip()


def _array_spans(raw: str):
    """Yield balanced ``[...]`` substrings in order of their opening bracket."""
    for start, ch in enumerate(raw):
        if ch != "[":
            continue
        depth = 0
        quote = None
        escaped = False
        for end in range(start, len(raw)):
            c = raw[end]
            if quote:
                if escaped:
                    escaped = False
                elif c == "\\":
                    escaped = True
                elif c == quote:
                    quote = None
                continue
            if c in "\"'":
                quote = c
            elif c == "[":
                depth += 1
            elif c == "]":
                depth -= 1
                if depth == 0:
                    yield raw[start:end + 1]
                    break


def _load_array(span: str):
    try:
        return json.loads(span)
    except json.JSONDecodeError:
        pass
    try:
        return ast.literal_eval(span)
    except (ValueError, SyntaxError, MemoryError, RecursionError):
        return None


def _confidence(value) -> float:
    if isinstance(value, bool):
        raise ValueError("boolean confidence")
    if isinstance(value, (int, float)):
        c = float(value)
    else:
        m = _NUMBER.search(str(value))
        if not m:
            raise ValueError(f"no number in confidence {value!r}")
        c = float(m.group())
    return min(100.0, max(0.0, c))


def parse_response(raw: str, class_names) -> list:
    """Return ``[(label_index, confidence), ...]`` from a model reply.

    The first bracketed span that decodes to a list of answer objects is
    used. Labels match class names ignoring case, whitespace and
    punctuation; confidences are clamped to [0, 100]. Raises
    :class:`ParseFailure` otherwise.
    """
    lookup = {normalize_label(c): i for i, c in enumerate(class_names)}
    items = None
    for span in _array_spans(raw or ""):
        obj = _load_array(span)
        if isinstance(obj, list) and all(isinstance(o, dict) for o in obj):
            items = obj
            break
    if items is None:
        raise ParseFailure("no_json", "no JSON array of answers found")
    if not items:
        raise ParseFailure("empty", "answer list is empty")
    out = []
    for obj in items:
        answer = obj.get("answer")
        if answer is None:
            raise ParseFailure("no_json", "answer object lacks an 'answer' field")
        idx = lookup.get(normalize_label(answer))
        if idx is None:
            raise ParseFailure("invalid_label", f"{answer!r} is not a valid class", answer=str(answer))
        try:
            conf = _confidence(obj.get("confidence", 0))
        except ValueError:
            conf = 0.0
        out.append((idx, conf))
    return out


def aggregate_hybrid(responses) -> tuple | None:
    """Combine ``m`` parsed answer lists into one ``(label, confidence)``.

    The winner is the most frequent top-1 answer; ties go to the larger
    confidence summed over all lists, then to the lower class index. The
    confidence is the winner's mean reported confidence across all lists,
    counting lists that omit it as 0. Returns ``None`` when no list is given.
    """
    responses = [r for r in responses if r]
    if not responses:
        return None
    votes = {}
    summed = {}
    for resp in responses:
        top = resp[0][0]
        votes[top] = votes.get(top, 0) + 1
        seen = set()
        for label, conf in resp:
            if label in seen:
                continue
            seen.add(label)
            summed[label] = summed.get(label, 0.0) + conf
    winner = min(votes, key=lambda c: (-votes[c], -summed.get(c, 0.0), c))
    total = 0.0
    for resp in responses:
        total += next((conf for label, conf in resp if label == winner), 0.0)
    return winner, total / len(responses)
