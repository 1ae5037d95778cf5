"""Prompt templates for confidence-aware zero-shot annotation."""
from __future__ import annotations

from dataclasses import dataclass

KINDS = ("vanilla_zero_shot", "topk", "most_voting", "hybrid")
ELLIPSIS = "..."


@dataclass(frozen=True)
class PromptStrategy:
    kind: str = "hybrid"
    top_k: int = 3
    num_queries: int = 3
    temperature_primary: float = 0.0
    temperature_correction: float = 1.0
    max_prompt_chars: int = 1200
    object_noun: str = "paper"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown prompt strategy {self.kind!r}; choose from {KINDS}")
        if self.top_k < 1:
            raise ValueError("top_k must be positive")
        if self.num_queries < 1:
            raise ValueError("num_queries must be positive")

    @property
    def asks_topk(self) -> bool:
        return self.kind in ("topk", "hybrid")

    @property
    def queries(self) -> int:
        """Requests issued per node."""
        return self.num_queries if self.kind in ("most_voting", "hybrid") else 1

    @property
    def tag(self) -> str:
        if self.kind == "vanilla_zero_shot":
            return "vanilla_zero_shot"
        if self.kind == "topk":
            return f"topk(k={self.top_k})"
        if self.kind == "most_voting":
            return f"most_voting(m={self.num_queries})"
        return f"hybrid(k={self.top_k},m={self.num_queries})"


def category_list(class_names) -> str:
    return "[" + ", ".join(class_names) + "]"


def _instruction(strategy: PromptStrategy) -> str:
    if strategy.asks_topk:
        k = strategy.top_k
        return (f"Provide your {k} best guesses and a confidence number that each is correct (0 to 100) "
                "for the following question from most probable to least. The sum of all confidence "
                'should be 100. For example, [ {"answer": <your_first_answer>, '
                '"confidence": <confidence_for_first_answer>}, ... ]')
    return ("Provide your best guess and a confidence number that it is correct (0 to 100) for the "
            'following question. For example, [ {"answer": <your_answer>, "confidence": <confidence>} ]')


def _render(strategy, text, class_names):
    return (f"Question: {text}\n"
            "Task:\n"
            "There are following categories:\n"
            f"{category_list(class_names)}\n"
            f"What's the category of this {strategy.object_noun}?\n"
            f"{_instruction(strategy)}\n"
            "Output:\n")


def build_prompt(strategy: PromptStrategy, node_text: str, class_names) -> str:
    """Render the zero-shot annotation prompt for one node.

    The node text is cut (with a trailing ``...``) so the whole prompt fits
    in ``strategy.max_prompt_chars``.
    """
    class_names = list(class_names)
    if not class_names:
        raise ValueError("class list is empty")
    if strategy.asks_topk and strategy.top_k > len(class_names):
        raise ValueError(f"top_k={strategy.top_k} exceeds {len(class_names)} classes")
    text = " ".join(str(node_text).split())
    if not text:
        raise ValueError("node text is empty")
    prompt = _render(strategy, text, class_names)
    overflow = len(prompt) - strategy.max_prompt_chars
    if overflow > 0:
        keep = len(text) - overflow - len(ELLIPSIS)
        if keep <= 0:
            raise ValueError(f"prompt template alone exceeds {strategy.max_prompt_chars} characters")
        prompt = _render(strategy, text[:keep].rstrip() + ELLIPSIS, class_names)
    return prompt


def build_self_correction_prompt(previous_prompt: str, previous_output: str, failure, class_names) -> str:
    """Follow-up prompt asking the model to repair a malformed answer.

    ``failure`` is the :class:`~labelfree.annotator.parsing.ParseFailure`
    raised for ``previous_output``; the invalid answer is quoted back when
    the failure is an unknown label.
    """
    lines = [f"Previous prompt: {previous_prompt}",
             "Your previous output doesn't follow the format, please correct it",
             f"old output: {previous_output}"]
    answer = getattr(failure, "answer", None)
    if getattr(failure, "kind", None) == "invalid_label" and answer is not None:
        lines.append(f"Your previous answer {answer} is not a valid class.")
    lines += ["You should only output categories from the following list:",
              category_list(class_names),
              "New output here:"]
    return "\n".join(lines) + "\n"
