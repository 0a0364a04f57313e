"""Prompt construction for steering a model toward a subpopulation, plus
few-shot example selection and parsing of verbalized JSON distributions.

All builders are pure functions of their inputs and produce byte-stable
output; golden snapshots of representative prompts live in the test suite.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass

from .errors import ParseError, PromptError
from .survey import Distribution, Question, Subpopulation


class PromptStyle(enum.Enum):
    QA = "QA"
    BIO = "BIO"
    PORTRAY = "PORTRAY"


@dataclass(frozen=True)
class FewShotConfig:
    k: int = 5
    decimals: int = 3

    def __post_init__(self):
        if self.k < 1:
            raise PromptError(f"few-shot k must be >= 1, got {self.k}")


def _question_block(question: Question) -> str:
    lines = [f"Question: {question.text}"]
    for opt in question.options:
        lines.append(f"{opt.letter}. {opt.text}")
    return "\n".join(lines)


# First-token scoring relies on the next emitted token being the bare
# option letter, so the cue ends with "Answer:" plus a single space.
ANSWER_CUE = "Answer: "


def build_prompt(group: Subpopulation, question: Question, style: PromptStyle) -> str:
    """Steering prefix + question block + answer cue."""
    steering = group.steering_texts.get(style.value)
    if steering is None:
        raise PromptError(f"group {group.label!r} has no steering text for style {style.value}")
    return f"{steering}\n\n{_question_block(question)}\n{ANSWER_CUE}"


def cosine(u, v) -> float:
    import numpy as np

    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise PromptError(f"embedding dimension mismatch: {u.shape} vs {v.shape}")
    return float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)))


def select_fewshot(target: Question, pool, embeddings,
                   cfg: FewShotConfig = FewShotConfig()) -> list[Question]:
    """The ``cfg.k`` pool questions most similar to ``target``, in ascending
    similarity order (most similar ends up adjacent to the target question).

    Similarity ties are broken by question id ascending; the result is
    invariant to pool ordering.
    """
    pool = list(pool)
    if len(pool) < cfg.k:
        raise PromptError(f"need at least {cfg.k} pool questions, got {len(pool)}")
    for q in pool:
        if q.id == target.id:
            raise PromptError(f"pool must exclude the target question {target.id!r}")
    try:
        target_emb = embeddings[target.id]
        scored = [(cosine(embeddings[q.id], target_emb), q) for q in pool]
    except KeyError as exc:
        raise PromptError(f"missing embedding for question {exc}") from exc
    scored.sort(key=lambda item: (-item[0], item[1].id))
    top = scored[: cfg.k]
    top.reverse()
    return [q for _, q in top]


def format_distribution_json(dist: Distribution, question: Question, decimals: int) -> str:
    pairs = ", ".join(
        f'"{opt.letter}": {prob:.{decimals}f}'
        for opt, prob in zip(question.options, dist.probs)
    )
    return "{" + pairs + "}"


def build_fewshot_prompt(group: Subpopulation, examples, target: Question,
                         cfg: FewShotConfig = FewShotConfig()) -> str:
    """Group info, k (question, JSON distribution) blocks, then the target
    question with an instruction to answer in the same JSON format.

    ``examples`` is a sequence of (Question, Distribution) pairs carrying the
    group's observed distribution for each example question.
    """
    examples = list(examples)
    if not examples:
        raise PromptError("few-shot prompt requires at least one example")
    parts = [group.steering_texts["QA"], ""]
    for question, dist in examples:
        if dist.question_id != question.id:
            raise PromptError(
                f"distribution for {dist.question_id!r} paired with question {question.id!r}"
            )
        parts.append(_question_block(question))
        parts.append("Response distribution: " + format_distribution_json(dist, question, cfg.decimals))
        parts.append("")
    parts.append(_question_block(target))
    letters = ", ".join(f'"{letter}"' for letter in target.letters)
    parts.append(
        "Give the response distribution of this group as a JSON object mapping "
        f"the option letters ({letters}) to probabilities."
    )
    parts.append("Response distribution: ")
    return "\n".join(parts)


def parse_verbalized_distribution(text: str, question: Question) -> Distribution:
    """Extract the first JSON object keyed by the question's option letters.

    Missing letters get probability 0; values are renormalized to sum 1.
    """
    decoder = json.JSONDecoder()
    letters = set(question.letters)
    start = text.find("{")
    while start != -1:
        try:
            obj, _ = decoder.raw_decode(text, start)
        except json.JSONDecodeError:
            obj = None
        if isinstance(obj, dict) and obj and set(obj) <= letters:
            values = {}
            for letter, value in obj.items():
                if not isinstance(value, (int, float)) or isinstance(value, bool):
                    raise ParseError(
                        f"non-numeric probability for option {letter!r}", snippet=text[start:start + 80]
                    )
                if value < 0:
                    raise ParseError(
                        f"negative probability for option {letter!r}", snippet=text[start:start + 80]
                    )
                values[letter] = float(value)
            total = sum(values.values())
            if total <= 0.0:
                raise ParseError("all-zero probability mass", snippet=text[start:start + 80])
            probs = tuple(values.get(letter, 0.0) / total for letter in question.letters)
            return Distribution(question.id, probs)
        start = text.find("{", start + 1)
    raise ParseError("no parseable JSON distribution found", snippet=text[:120])
