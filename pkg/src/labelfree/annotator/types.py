from __future__ import annotations

from dataclasses import dataclass, field

ABSTAIN = -1


@dataclass(frozen=True)
class Annotation:
    node_id: int
    label_index: int
    confidence: float
    raw_responses: tuple = ()
    strategy: str = ""
    attempts: int = 1
    is_simulated: bool = False

    def __post_init__(self):
        if self.label_index < ABSTAIN:
            raise ValueError(f"invalid label index {self.label_index}")
        if not 0.0 <= self.confidence <= 100.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 100]")
        if self.label_index == ABSTAIN and self.confidence != 0.0:
            raise ValueError("abstained annotations carry zero confidence")
        if self.attempts < 1:
            raise ValueError("attempts must be positive")
        object.__setattr__(self, "raw_responses", tuple(self.raw_responses))

    @property
    def abstained(self) -> bool:
        return self.label_index == ABSTAIN

    @classmethod
    def abstain(cls, node_id, raw=(), strategy="", attempts=1, is_simulated=False):
        return cls(node_id, ABSTAIN, 0.0, tuple(raw), strategy, max(1, attempts), is_simulated)


@dataclass
class CostReport:
    prompt_tokens_estimate: int = 0
    completion_tokens_estimate: int = 0
    dollars_estimate: float = 0.0
    requests: int = 0
    retries: int = 0
    # usage figures echoed by a live provider, when it reports them
    provider_prompt_tokens: int = 0
    provider_completion_tokens: int = 0
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "prompt_tokens_estimate": self.prompt_tokens_estimate,
            "completion_tokens_estimate": self.completion_tokens_estimate,
            "dollars_estimate": self.dollars_estimate,
            "requests": self.requests,
            "retries": self.retries,
            "provider_prompt_tokens": self.provider_prompt_tokens,
            "provider_completion_tokens": self.provider_completion_tokens,
        }
