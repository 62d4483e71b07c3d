"""System prompt variants and the user prompt template."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from importlib import resources
from typing import Sequence, Union

from ..ast import Requirement

VARIANTS = ("zero", "one", "few")


@dataclass(frozen=True)
class PromptVariant:
    name: str
    system_text: str

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.system_text.encode("utf-8")).hexdigest()[:16]


def load_prompt(name: str) -> PromptVariant:
    short = name.split("-")[0]
    if short not in VARIANTS:
        raise ValueError(f"unknown prompt variant '{name}' (choose from {', '.join(VARIANTS)})")
    text = resources.files(__package__).joinpath("prompts", f"{short}.txt").read_text(encoding="utf-8")
    return PromptVariant(short, text)


@dataclass(frozen=True)
class GenerationJob:
    model_text: str
    requirements: tuple[str, ...]
    index: int
    n: int
    provider: str = "mock"
    params: tuple[tuple[str, object], ...] = ()

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("N must be at least 1")
        if not 0 <= self.index < len(self.requirements):
            raise ValueError(f"requirement index {self.index} out of range")

    @classmethod
    def of(cls, model_text: str, reqs: Sequence[Union[str, Requirement]], index: int, n: int, provider: str = "mock", **params):
        texts = tuple(r.text if isinstance(r, Requirement) else r for r in reqs)
        return cls(model_text, texts, index, n, provider, tuple(sorted(params.items())))


def _quoted(texts: Sequence[str]) -> str:
    q = [f'"{t}"' for t in texts]
    if len(q) == 1:
        return q[0]
    return ", ".join(q[:-1]) + ", and " + q[-1]


def build_user_prompt(job: GenerationJob) -> str:
    i, reqs = job.index, job.requirements
    lines = [f'Generate {job.n} positive and {job.n} negative instances for the requirement "{reqs[i]}" for the following model.']
    if i == 1:
        lines.append(f"All instances must also satisfy the requirement {_quoted(reqs[:1])}.")
    elif i > 1:
        lines.append(f"All instances must also satisfy the requirements {_quoted(reqs[:i])}.")
    return " ".join(lines) + "\n\n" + job.model_text.strip() + "\n"
