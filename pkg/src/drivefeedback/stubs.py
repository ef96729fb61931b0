"""Offline backends: a deterministic stub, an adversarial stub and test doubles.

The stub answers tip prompts with a compliant tip built from the embedded
provision, draft prompts by rendering the embedded plan as prose, and
revision prompts by rebuilding the plan from the embedded statistics.
"""

from __future__ import annotations

import json
import random
import re
import threading
from dataclasses import dataclass, field
from typing import Sequence

from . import reports, tips
from .backends import BackendError


def _line_value(prompt: str, key: str) -> str:
    m = re.search(rf"^{re.escape(key)}: (.*)$", prompt, re.MULTILINE)
    if m is None:
        raise BackendError(f"stub cannot find {key} in prompt")
    return m.group(1).strip()


def _stub_tip(prompt: str) -> str:
    section_id = _line_value(prompt, "SECTION-ID")
    provision = prompt.split("<<<\n", 1)[1].split("\n>>>", 1)[0]
    marker = tips.citation_marker(section_id)
    head = "Drive with care:"
    budget = tips.MAX_TIP_WORDS - len(head.split()) - len(marker.split())
    words = tips.first_sentence(provision).split()[:budget]
    return " ".join([head, *words, marker])


def render_prose(plan: reports.ReportPlan) -> str:
    parts = [
        "Hello, here is your driving summary for the week.",
        f"{reports.ATTITUDE_HEADER}: " + " ".join(plan.attitude_points),
        f"{reports.NORMS_HEADER}: " + " ".join(plan.norm_points),
        f"{reports.CONTROL_HEADER}: " + " ".join(plan.control_points),
        "Every careful trip makes a difference. Drive safely!",
    ]
    return "\n\n".join(parts)


def _stub_report(prompt: str) -> str:
    if prompt.startswith(reports.DRAFT_HEADER):
        plan_json = reports.extract_block(prompt, reports.PLAN_BEGIN, reports.PLAN_END)
        return render_prose(reports.ReportPlan.from_dict(json.loads(plan_json)))
    stats_json = reports.extract_block(prompt, reports.STATS_BEGIN, reports.STATS_END)
    stats = reports.WeeklyStats.from_dict(json.loads(stats_json))
    return render_prose(reports.plan_report(stats))


@dataclass
class StubBackend:
    max_prompt_length: int = 1_000_000

    def generate(self, model_id: str, prompt: str) -> str:
        if prompt.startswith(tips.TIP_PROMPT_HEADER):
            return _stub_tip(prompt)
        if prompt.startswith((reports.DRAFT_HEADER, reports.REVISE_HEADER, reports.CORRECT_HEADER)):
            return _stub_report(prompt)
        raise BackendError("stub backend does not recognise this prompt")


_NUMERAL = re.compile(r"\d+(?:\.\d+)?")


@dataclass
class CallRecord:
    header: str
    model_id: str
    corrupted: bool
    output: str


@dataclass
class AdversarialStub:
    """Stub whose answers are corrupted with a given probability.

    Report answers get a numeral replaced by an implausibly large value (or a
    fabricated sentence when there is no numeral); tip answers lose their
    citation, gain an unsupported number or run past the length limit.
    """

    corrupt_probability: float = 0.5
    seed: int = 0
    max_prompt_length: int = 1_000_000
    calls: list[CallRecord] = field(default_factory=list)
    _inner: StubBackend = field(default_factory=StubBackend)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self) -> None:
        self._rng = random.Random(self.seed)

    def _corrupt_report(self, text: str) -> str:
        bogus = str(100_000 + self._rng.randrange(900_000))
        if _NUMERAL.search(text):
            return _NUMERAL.sub(bogus, text, count=1)
        return text + f"\n\nYou made {bogus} risky moves this week."

    def _corrupt_tip(self, text: str) -> str:
        mode = self._rng.choice(("drop-marker", "add-number", "too-long"))
        if mode == "drop-marker":
            return re.sub(r"\s*\(Highway Code §[^)]*\)\s*$", "", text)
        if mode == "add-number":
            return "Never drive above 120 km/h. " + text
        return " ".join(["Please"] * 70) + " " + text

    def generate(self, model_id: str, prompt: str) -> str:
        text = self._inner.generate(model_id, prompt)
        with self._lock:
            corrupt = self._rng.random() < self.corrupt_probability
            if corrupt:
                text = self._corrupt_tip(text) if prompt.startswith(tips.TIP_PROMPT_HEADER) else self._corrupt_report(text)
            self.calls.append(CallRecord(prompt.split(" ", 1)[0], model_id, corrupt, text))
        return text


@dataclass
class ScriptedBackend:
    """Returns queued responses in order; an Exception entry is raised instead."""

    responses: Sequence[str | Exception]
    max_prompt_length: int = 1_000_000
    prompts: list[tuple[str, str]] = field(default_factory=list)

    def generate(self, model_id: str, prompt: str) -> str:
        idx = len(self.prompts)
        self.prompts.append((model_id, prompt))
        if idx >= len(self.responses):
            raise BackendError("scripted backend exhausted")
        item = self.responses[idx]
        if isinstance(item, Exception):
            raise item
        return item


@dataclass
class FailingBackend:
    reason: str = "backend unreachable"
    max_prompt_length: int = 1_000_000
    calls: int = 0

    def generate(self, model_id: str, prompt: str) -> str:
        self.calls += 1
        raise BackendError(self.reason)
