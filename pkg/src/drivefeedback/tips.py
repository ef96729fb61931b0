"""Keyword/mapping retrieval over a local Highway Code corpus and grounded tips.

Every tip that leaves this module either passed ``verify_grounding`` or is
the deterministic fallback built from the retrieved provision itself.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Mapping, Sequence

from .backends import BackendError, GenerationBackend
from .errors import DriveFeedbackError, ValidationError
from .events import EventKind, Severity, UnsafeEvent

TIP_PROMPT_VERSION = "tip-prompt/v1"
TIP_PROMPT_HEADER = "TIP-PROMPT"
MAX_TIP_WORDS = 60
DEFAULT_TIP_MODEL = "tip-model"

_NUMBER = re.compile(r"\d+(?:[.,]\d+)*")
_SENTENCE_END = re.compile(r"(?<=[.!?])\s+")


class CorpusValidationError(ValidationError):
    pass


class NoGroundingError(DriveFeedbackError):
    """No provision could be matched; a tip must not be generated."""


@dataclass(frozen=True)
class CodeSection:
    section_id: str
    title: str
    text: str
    keywords: tuple[str, ...]


@dataclass(frozen=True)
class CodeCorpus:
    sections: tuple[CodeSection, ...]
    behaviour_map: Mapping[EventKind, str]

    def section(self, section_id: str) -> CodeSection | None:
        for s in self.sections:
            if s.section_id == section_id:
                return s
        return None

    def validate(self) -> None:
        seen: set[str] = set()
        for s in self.sections:
            if s.section_id in seen:
                raise CorpusValidationError(f"duplicate section id {s.section_id!r}")
            seen.add(s.section_id)
            if not s.text.strip() or not s.keywords:
                raise CorpusValidationError(f"section {s.section_id!r} has empty text or keywords")
        for kind in EventKind:
            target = self.behaviour_map.get(kind)
            if target is None:
                raise CorpusValidationError(f"behaviour_map missing {kind.value}")
            if target not in seen:
                raise CorpusValidationError(f"behaviour_map {kind.value} -> unknown section {target!r}")


def load_corpus(blob: bytes) -> CodeCorpus:
    try:
        doc = json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise CorpusValidationError(f"corpus is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or set(doc) != {"version", "sections", "behaviour_map"}:
        raise CorpusValidationError("corpus must have exactly version, sections, behaviour_map")
    sections = []
    for raw in doc["sections"]:
        if not isinstance(raw, dict) or set(raw) != {"id", "title", "text", "keywords"}:
            raise CorpusValidationError(f"malformed section entry {str(raw)[:60]!r}")
        keywords = raw["keywords"]
        if not isinstance(keywords, list) or not all(isinstance(k, str) for k in keywords):
            raise CorpusValidationError(f"section {raw['id']!r} keywords must be a list of strings")
        sections.append(
            CodeSection(str(raw["id"]), str(raw["title"]), str(raw["text"]), tuple(k.lower() for k in keywords))
        )
    bmap = doc["behaviour_map"]
    if not isinstance(bmap, dict):
        raise CorpusValidationError("behaviour_map must be an object")
    try:
        behaviour_map = {EventKind(k): v for k, v in bmap.items()}
    except ValueError as exc:
        raise CorpusValidationError(f"unknown behaviour in behaviour_map: {exc}") from exc
    corpus = CodeCorpus(tuple(sections), behaviour_map)
    corpus.validate()
    return corpus


def sample_corpus() -> CodeCorpus:
    """The bundled 12-section illustrative corpus."""
    blob = resources.files("drivefeedback.data").joinpath("highway_code_sample.json").read_bytes()
    return load_corpus(blob)


_RETRIEVAL_TOKEN = object()


@dataclass(frozen=True)
class Grounding:
    """A section obtained through ``retrieve``; the only input ``generate_tip`` accepts."""

    section: CodeSection
    kind: EventKind
    method: str
    _token: object = field(repr=False, compare=False, default=None)

    def __post_init__(self) -> None:
        if self._token is not _RETRIEVAL_TOKEN:
            raise TypeError("Grounding objects are created by retrieve() only")


def retrieve(corpus: CodeCorpus, kind: EventKind, context_terms: Iterable[str] = ()) -> Grounding:
    target = corpus.behaviour_map.get(kind)
    if target is not None:
        section = corpus.section(target)
        if section is not None:
            return Grounding(section, kind, "mapped", _RETRIEVAL_TOKEN)
    terms = {t.lower() for t in context_terms}
    best, best_score = None, 0
    for section in corpus.sections:
        score = len(terms & set(section.keywords))
        if score > best_score:
            best, best_score = section, score
    if best is None:
        raise NoGroundingError(f"no provision matches {kind.value} with terms {sorted(terms)}")
    return Grounding(best, kind, "keyword", _RETRIEVAL_TOKEN)


def citation_marker(section_id: str) -> str:
    return f"(Highway Code §{section_id})"


def build_tip_prompt(section: CodeSection, event: UnsafeEvent) -> str:
    marker = citation_marker(section.section_id)
    return "\n".join(
        [
            f"{TIP_PROMPT_HEADER} {TIP_PROMPT_VERSION}",
            "You write short, respectful road-safety tips for drivers in Nigeria.",
            f"EVENT: {event.kind.value}",
            f"SEVERITY: {event.severity.value}",
            f"SECTION-ID: {section.section_id}",
            f"SECTION-TITLE: {section.title}",
            "PROVISION:",
            "<<<",
            section.text,
            ">>>",
            "Write one concise, supportive safety tip for this driver based only on the provision above.",
            f"Keep it to at most {MAX_TIP_WORDS} words. Do not introduce any number that is not in the provision.",
            f'End the tip with the exact citation marker "{marker}".',
        ]
    )


def _numbers(text: str) -> set[str]:
    return set(_NUMBER.findall(text))


def _word_count(text: str) -> int:
    return len(text.split())


def grounding_problems(tip_text: str, section: CodeSection) -> list[str]:
    problems = []
    marker = citation_marker(section.section_id)
    stripped = tip_text.strip()
    if not stripped.endswith(marker):
        problems.append(f"must end with {marker}")
    body = stripped.replace(marker, " ")
    stray = sorted(_numbers(body) - _numbers(section.text))
    if stray:
        problems.append(f"numbers not in the provision: {', '.join(stray)}")
    if _word_count(stripped) > MAX_TIP_WORDS:
        problems.append(f"longer than {MAX_TIP_WORDS} words")
    return problems


def verify_grounding(tip_text: str, section: CodeSection) -> bool:
    return not grounding_problems(tip_text, section)


@dataclass(frozen=True)
class Tip:
    text: str
    section_id: str
    grounded: bool
    degraded: bool = False
    error: str | None = None
    trip_id: str | None = None
    kind: EventKind | None = None

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "section_id": self.section_id,
            "grounded": self.grounded,
            "degraded": self.degraded,
            "error": self.error,
            "trip_id": self.trip_id,
            "kind": self.kind.value if self.kind else None,
        }


def first_sentence(text: str) -> str:
    return _SENTENCE_END.split(text.strip(), maxsplit=1)[0]


def fallback_tip_text(section: CodeSection) -> str:
    marker = citation_marker(section.section_id)
    head = f"Follow {section.title}:"
    budget = MAX_TIP_WORDS - _word_count(head) - _word_count(marker)
    words = first_sentence(section.text).split()
    return " ".join([head, *words[: max(budget, 0)], marker])


def generate_tip(
    backend: GenerationBackend,
    grounding: Grounding,
    event: UnsafeEvent,
    model_id: str = DEFAULT_TIP_MODEL,
) -> Tip:
    """Ask the backend for a tip, verify it, retry once, else fall back."""
    if not isinstance(grounding, Grounding):
        raise TypeError("generate_tip needs a Grounding from retrieve()")
    section = grounding.section
    prompt = build_tip_prompt(section, event)
    error: str | None = None
    for attempt in range(2):
        try:
            text = backend.generate(model_id, prompt).strip()
        except BackendError as exc:
            error = str(exc)
            continue
        problems = grounding_problems(text, section)
        if not problems:
            return Tip(text, section.section_id, True, trip_id=event.trip_id, kind=event.kind)
        error = None
        prompt = (
            build_tip_prompt(section, event)
            + "\nYour previous answer failed verification ("
            + "; ".join(problems)
            + "). Rewrite it so that it satisfies every rule above."
        )
    return Tip(
        fallback_tip_text(section),
        section.section_id,
        True,
        degraded=True,
        error=error,
        trip_id=event.trip_id,
        kind=event.kind,
    )


_SEVERITY_RANK = {Severity.HIGH: 0, Severity.MEDIUM: 1, Severity.LOW: 2}


def select_tip_events(events: Sequence[UnsafeEvent]) -> list[UnsafeEvent]:
    """At most one event per (trip, kind): the most severe, earliest on ties."""
    chosen: dict[tuple[str, EventKind], UnsafeEvent] = {}
    for e in sorted(events, key=lambda e: (_SEVERITY_RANK[e.severity], e.start_ts)):
        chosen.setdefault((e.trip_id, e.kind), e)
    return sorted(chosen.values(), key=lambda e: (_SEVERITY_RANK[e.severity], e.start_ts))
