"""Run generation jobs and persist their records."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Union

from .. import __version__
from ..parser import extract_commands
from ..pipeline import infer_polarity, write_atomic
from .prompts import GenerationJob, PromptVariant, build_user_prompt
from .providers import Provider, ReplayProvider


@dataclass
class ExtractedTest:
    raw: str
    comment: Optional[str]
    polarity: Optional[str]


@dataclass
class GenerationRecord:
    job: GenerationJob
    prompt: str
    prompt_digest: str
    user_prompt: str
    raw_response: str
    tests: list[ExtractedTest] = field(default_factory=list)
    usage: dict = field(default_factory=dict)
    cost: Optional[float] = None
    provider: str = ""
    provider_model: str = ""
    params_applied: dict = field(default_factory=dict)
    timestamp: str = ""
    tool_version: str = __version__

    @property
    def flagged(self) -> bool:
        """The response yielded no run command at all."""
        return not self.tests

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["job"]["params"] = dict(self.job.params)
        doc["flagged"] = self.flagged
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "GenerationRecord":
        doc = dict(doc)
        doc.pop("flagged", None)
        job = dict(doc.pop("job"))
        job["requirements"] = tuple(job["requirements"])
        job["params"] = tuple(sorted(job.get("params", {}).items()))
        tests = [ExtractedTest(**t) for t in doc.pop("tests", [])]
        return cls(GenerationJob(**job), tests=tests, **doc)


def generate(job: GenerationJob, prompt: PromptVariant, provider: Provider) -> GenerationRecord:
    user = build_user_prompt(job)
    if isinstance(provider, ReplayProvider):
        provider.index = job.index
    resp = provider.complete(prompt.system_text, user, dict(job.params))
    tests = [ExtractedTest(raw, comment, infer_polarity(comment)) for raw, comment in extract_commands(resp.text)]
    return GenerationRecord(
        job=job,
        prompt=prompt.name,
        prompt_digest=prompt.digest,
        user_prompt=user,
        raw_response=resp.text,
        tests=tests,
        usage=dict(resp.usage),
        cost=resp.cost,
        provider=provider.name,
        provider_model=resp.model,
        params_applied=dict(resp.params_applied),
        timestamp=datetime.now(timezone.utc).isoformat(timespec="seconds"),
    )


def save_record(record: GenerationRecord, directory: Union[str, Path]) -> Path:
    """Write the raw response text and the JSON record; both writes are atomic."""
    directory = Path(directory)
    i = record.job.index
    write_atomic(directory / f"{i}.response.txt", record.raw_response)
    path = directory / f"{i}.record.json"
    write_atomic(path, json.dumps(record.to_json(), indent=2, sort_keys=True) + "\n")
    return path


def suite_text(record: GenerationRecord, repaired: Optional[list[str]] = None) -> str:
    """The suite file for one requirement: each command preceded by its comment."""
    blocks = []
    for k, t in enumerate(record.tests):
        raw = repaired[k] if repaired is not None else t.raw
        head = "".join(f"// {line}\n" for line in t.comment.splitlines()) if t.comment else ""
        blocks.append(head + raw.strip() + "\n")
    return "\n".join(blocks)
