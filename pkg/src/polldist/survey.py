"""Survey data model: questions, respondents, responses, and weighted answer distributions.

The dataset on disk is three files under one directory:

* ``questions.jsonl`` -- one question per line with its lettered options,
* ``respondents.csv`` -- id, weight, and one column per demographic trait,
* ``responses.csv``   -- respondent_id, question_id, option_letter.

Everything is validated eagerly at load time; a :class:`SurveyDataset` is
immutable afterwards and safe to share across workers.
"""

from __future__ import annotations

import csv
import json
import string
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DatasetError, NoDataError


@dataclass(frozen=True)
class AnswerOption:
    letter: str
    text: str
    ordinal: int | None
    is_refusal: bool = False

    def __post_init__(self):
        if len(self.letter) != 1 or self.letter not in string.ascii_uppercase:
            raise DatasetError(f"option letter must be a single uppercase letter, got {self.letter!r}")
        if self.is_refusal and self.ordinal is not None:
            raise DatasetError(f"refusal option {self.letter!r} must not carry an ordinal")
        if not self.is_refusal and self.ordinal is None:
            raise DatasetError(f"substantive option {self.letter!r} must carry an ordinal")


@dataclass(frozen=True)
class Question:
    id: str
    wave: str
    text: str
    options: tuple[AnswerOption, ...]

    def __post_init__(self):
        object.__setattr__(self, "options", tuple(self.options))
        n = len(self.options)
        if not 2 <= n <= 10:
            raise DatasetError(f"question {self.id!r} must have 2-10 options, has {n}")
        letters = [o.letter for o in self.options]
        expected = list(string.ascii_uppercase[:n])
        if letters != expected:
            raise DatasetError(
                f"question {self.id!r}: option letters must be consecutive from A, got {letters}"
            )
        ordinals = sorted(o.ordinal for o in self.options if not o.is_refusal)
        if ordinals != list(range(1, len(ordinals) + 1)):
            raise DatasetError(
                f"question {self.id!r}: substantive ordinals must be a permutation of 1..n, got {ordinals}"
            )

    @property
    def letters(self) -> tuple[str, ...]:
        return tuple(o.letter for o in self.options)

    @property
    def substantive_indices(self) -> tuple[int, ...]:
        return tuple(i for i, o in enumerate(self.options) if not o.is_refusal)

    def index_of(self, letter: str) -> int:
        for i, o in enumerate(self.options):
            if o.letter == letter:
                return i
        raise DatasetError(f"question {self.id!r} has no option letter {letter!r}")


#: style name -> (QA trait question, BIO sentence, PORTRAY "as if" clause),
#: with {group} interpolated. Region wording follows the established steering
#: phrasings; other traits use pinned reconstructions.
_STEERING_TEMPLATES: dict[str, tuple[str, str, str]] = {
    "region": (
        "Which part of the United States do you currently live in?",
        "I currently reside in the {group}.",
        "you currently reside in the {group}",
    ),
    "education": (
        "What is the highest level of education you have completed?",
        "My highest level of education is {group}.",
        "the highest level of education you have completed is {group}",
    ),
    "gender": (
        "Which of the following describes your gender?",
        "My gender is {group}.",
        "your gender is {group}",
    ),
    "race": (
        "Which of the following describes your race or ethnicity?",
        "My race or ethnicity is {group}.",
        "your race or ethnicity is {group}",
    ),
    "income": (
        "Which of the following describes your annual household income?",
        "My annual household income is {group}.",
        "your annual household income is {group}",
    ),
    "party": (
        "In politics today, which party do you identify with?",
        "In politics today, I identify with the {group} party.",
        "you identify with the {group} party",
    ),
    "ideology": (
        "In general, how would you describe your political views?",
        "My political views are {group}.",
        "your political views are {group}",
    ),
    "religion": (
        "What is your present religion, if any?",
        "My religion is {group}.",
        "your religion is {group}",
    ),
    "age": (
        "Which of the following includes your age?",
        "My age is in the range {group}.",
        "your age is in the range {group}",
    ),
}

_GENERIC_TEMPLATE = (
    "Which of the following describes your {trait}?",
    "My {trait} is {group}.",
    "your {trait} is {group}",
)


def default_steering_texts(trait: str, group: str) -> dict[str, str]:
    """Steering text for the three prompt styles, from per-trait templates."""
    qa_q, bio, portray_clause = _STEERING_TEMPLATES.get(trait.lower(), _GENERIC_TEMPLATE)
    fmt = {"trait": trait, "group": group}
    return {
        "QA": "Question: {}\nAnswer: {}".format(qa_q.format(**fmt), group),
        "BIO": bio.format(**fmt),
        "PORTRAY": "Answer the following question as if " + portray_clause.format(**fmt) + ".",
    }


@dataclass(frozen=True)
class Subpopulation:
    trait: str
    group: str
    steering_texts: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.group:
            raise DatasetError("subpopulation group must be nonempty")
        if not self.steering_texts:
            object.__setattr__(self, "steering_texts", default_steering_texts(self.trait, self.group))
        missing = {"QA", "BIO", "PORTRAY"} - set(self.steering_texts)
        if missing:
            raise DatasetError(f"subpopulation {self.label!r} missing steering styles {sorted(missing)}")

    @property
    def label(self) -> str:
        return f"{self.trait}:{self.group}"


@dataclass(frozen=True)
class Respondent:
    id: str
    weight: float
    group_memberships: frozenset[tuple[str, str]]

    def __post_init__(self):
        if self.weight < 0:
            raise DatasetError(f"respondent {self.id!r}: weight must be nonnegative, got {self.weight}")


@dataclass(frozen=True)
class ResponseRecord:
    respondent_id: str
    question_id: str
    option_index: int


@dataclass(frozen=True)
class Distribution:
    question_id: str
    probs: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))
        if any(p < 0 for p in self.probs):
            raise DatasetError(f"distribution for {self.question_id!r} has negative entries")
        if abs(sum(self.probs) - 1.0) > 1e-9:
            raise DatasetError(
                f"distribution for {self.question_id!r} sums to {sum(self.probs)}, expected 1"
            )


class SurveyDataset:
    """Immutable container with referential integrity enforced at construction."""

    def __init__(self, questions, respondents, responses, subpopulations, source_family=""):
        self.questions: dict[str, Question] = {}
        for q in questions:
            if q.id in self.questions:
                raise DatasetError(f"duplicate question id {q.id!r}")
            self.questions[q.id] = q
        self.respondents: dict[str, Respondent] = {}
        for r in respondents:
            if r.id in self.respondents:
                raise DatasetError(f"duplicate respondent id {r.id!r}")
            self.respondents[r.id] = r
        self.subpopulations: tuple[Subpopulation, ...] = tuple(subpopulations)
        self._by_trait_group = {(s.trait, s.group): s for s in self.subpopulations}
        self.source_family = source_family

        self.responses: tuple[ResponseRecord, ...] = tuple(responses)
        self._by_question: dict[str, list[ResponseRecord]] = {q: [] for q in self.questions}
        seen: set[tuple[str, str]] = set()
        for rec in self.responses:
            if rec.respondent_id not in self.respondents:
                raise DatasetError(
                    f"response references unknown respondent {rec.respondent_id!r} "
                    f"(question {rec.question_id!r})"
                )
            q = self.questions.get(rec.question_id)
            if q is None:
                raise DatasetError(
                    f"response references unknown question {rec.question_id!r} "
                    f"(respondent {rec.respondent_id!r})"
                )
            if rec.option_index >= len(q.options):
                raise DatasetError(
                    f"response ({rec.respondent_id!r}, {rec.question_id!r}): option index "
                    f"{rec.option_index} out of range for {len(q.options)} options"
                )
            key = (rec.respondent_id, rec.question_id)
            if key in seen:
                raise DatasetError(f"duplicate response for respondent/question pair {key}")
            seen.add(key)
            self._by_question[rec.question_id].append(rec)

    def subpopulation(self, trait: str, group: str) -> Subpopulation:
        try:
            return self._by_trait_group[(trait, group)]
        except KeyError:
            raise DatasetError(f"unknown subpopulation {trait}:{group}") from None

    def responses_to(self, question_id: str) -> list[ResponseRecord]:
        if question_id not in self._by_question:
            raise DatasetError(f"unknown question id {question_id!r}")
        return list(self._by_question[question_id])


def members(dataset: SurveyDataset, group: Subpopulation) -> tuple[str, ...]:
    """Respondent ids belonging to ``group``, in deterministic (sorted) order."""
    if (group.trait, group.group) not in dataset._by_trait_group:
        raise DatasetError(f"group {group.label!r} not declared in dataset")
    key = (group.trait, group.group)
    return tuple(sorted(r.id for r in dataset.respondents.values() if key in r.group_memberships))


def weighted_distribution(dataset: SurveyDataset, group: Subpopulation, question: Question) -> Distribution:
    """Weight-normalized answer shares of ``group`` on ``question``.

    Each responding group member contributes its calibration weight to the
    chosen option; respondents who skipped the question are excluded.
    """
    member_set = set(members(dataset, group))
    totals = [0.0] * len(question.options)
    total_weight = 0.0
    # accumulate in respondent-id order so results do not depend on file order
    for rec in sorted(dataset.responses_to(question.id), key=lambda r: r.respondent_id):
        if rec.respondent_id not in member_set:
            continue
        w = dataset.respondents[rec.respondent_id].weight
        totals[rec.option_index] += w
        total_weight += w
    if total_weight <= 0.0:
        raise NoDataError(
            f"no positively weighted responses for {group.label} on question {question.id!r}",
            group=group.label,
            question_id=question.id,
        )
    return Distribution(question.id, tuple(t / total_weight for t in totals))


def _load_questions(path: Path) -> list[Question]:
    questions = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path.name}:{lineno}: invalid JSON: {exc}") from exc
            try:
                options = tuple(
                    AnswerOption(
                        letter=o["letter"],
                        text=o["text"],
                        ordinal=o.get("ordinal"),
                        is_refusal=bool(o.get("is_refusal", False)),
                    )
                    for o in row["options"]
                )
                questions.append(Question(id=row["id"], wave=row["wave"], text=row["text"], options=options))
            except KeyError as exc:
                raise DatasetError(f"{path.name}:{lineno}: missing field {exc}") from exc
            except DatasetError as exc:
                raise DatasetError(f"{path.name}:{lineno}: {exc}") from exc
    return questions


def _load_respondents(path: Path) -> tuple[list[Respondent], list[str]]:
    respondents = []
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "id" not in reader.fieldnames or "weight" not in reader.fieldnames:
            raise DatasetError(f"{path.name}: header must contain 'id' and 'weight' columns")
        traits = [c for c in reader.fieldnames if c not in ("id", "weight")]
        for lineno, row in enumerate(reader, start=2):
            try:
                weight = float(row["weight"])
            except ValueError:
                raise DatasetError(
                    f"{path.name}:{lineno}: field 'weight': not a number: {row['weight']!r}"
                ) from None
            memberships = frozenset(
                (trait, row[trait].strip()) for trait in traits if row[trait] and row[trait].strip()
            )
            try:
                respondents.append(Respondent(id=row["id"], weight=weight, group_memberships=memberships))
            except DatasetError as exc:
                raise DatasetError(f"{path.name}:{lineno}: {exc}") from exc
    return respondents, traits


def _load_responses(path: Path, questions: dict[str, Question]) -> list[ResponseRecord]:
    responses = []
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        needed = {"respondent_id", "question_id", "option_letter"}
        if reader.fieldnames is None or not needed.issubset(reader.fieldnames):
            raise DatasetError(f"{path.name}: header must contain {sorted(needed)}")
        for lineno, row in enumerate(reader, start=2):
            qid = row["question_id"]
            q = questions.get(qid)
            if q is None:
                raise DatasetError(
                    f"{path.name}:{lineno}: unknown question id {qid!r} "
                    f"(respondent {row['respondent_id']!r})"
                )
            try:
                idx = q.index_of(row["option_letter"])
            except DatasetError as exc:
                raise DatasetError(f"{path.name}:{lineno}: {exc}") from exc
            responses.append(ResponseRecord(row["respondent_id"], qid, idx))
    return responses


def load_dataset(root_path) -> SurveyDataset:
    """Load and validate the three-file dataset under ``root_path``."""
    root = Path(root_path)
    q_path, r_path, a_path = root / "questions.jsonl", root / "respondents.csv", root / "responses.csv"
    for p in (q_path, r_path, a_path):
        if not p.exists():
            raise DatasetError(f"missing dataset file: {p}")
    questions = _load_questions(q_path)
    q_index = {q.id: q for q in questions}
    if len(q_index) != len(questions):
        dupes = sorted({q.id for q in questions if sum(1 for x in questions if x.id == q.id) > 1})
        raise DatasetError(f"{q_path.name}: duplicate question ids {dupes}")
    respondents, traits = _load_respondents(r_path)
    responses = _load_responses(a_path, q_index)

    groups = sorted({m for r in respondents for m in r.group_memberships})
    subpops = [Subpopulation(trait=t, group=g) for t, g in groups]

    source_family = ""
    meta_path = root / "meta.json"
    if meta_path.exists():
        source_family = json.loads(meta_path.read_text(encoding="utf-8")).get("source_family", "")

    return SurveyDataset(questions, respondents, responses, subpops, source_family=source_family)
