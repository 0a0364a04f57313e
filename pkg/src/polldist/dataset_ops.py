"""Fine-tuning data export in three response-modeling modes, reference
batch losses, cross-dataset duplicate detection, and wave-stratified
question splits."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import metrics
from .errors import DatasetError, EvaluationError, NoDataError
from .prompting import PromptStyle, build_prompt
from .survey import Distribution, SurveyDataset, weighted_distribution

#: Recorded in export manifests for downstream trainers; not used here.
LORA_HYPERPARAMETERS = {"lora_rank": 8, "lora_alpha": 32, "lora_dropout": 0.05}


@dataclass(frozen=True)
class ExportMode:
    kind: str  # "explicit" | "one_hot" | "augment"
    n: int | None = None

    def __post_init__(self):
        if self.kind not in ("explicit", "one_hot", "augment"):
            raise ValueError(f"unknown export mode {self.kind!r}")
        if self.kind == "augment":
            if self.n is None or self.n < 1:
                raise ValueError(f"augment mode needs N >= 1, got {self.n}")
        elif self.n is not None:
            raise ValueError(f"mode {self.kind!r} takes no N")

    @classmethod
    def explicit(cls):
        return cls("explicit")

    @classmethod
    def one_hot(cls):
        return cls("one_hot")

    @classmethod
    def augment(cls, n: int):
        return cls("augment", n)

    @property
    def tag(self) -> str:
        return self.kind if self.n is None else f"{self.kind}x{self.n}"


def export_training(dataset: SurveyDataset, groups, style: PromptStyle, mode: ExportMode,
                    out_path) -> dict:
    """Write one JSONL training example per line and a manifest alongside.

    Explicit mode emits one line per (group, question) with the full
    letter-keyed distribution; one-hot emits the argmax letter; augment(N)
    emits N single-letter lines per pair via largest-remainder counts.
    Pairs without human data are skipped and listed in the manifest.
    """
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    questions = sorted(dataset.questions.values(), key=lambda q: q.id)
    skipped = []
    n_lines = 0
    n_pairs = 0
    with out_path.open("w", encoding="utf-8") as fh:
        for group in groups:
            for question in questions:
                try:
                    human = weighted_distribution(dataset, group, question)
                except NoDataError:
                    skipped.append({"group": group.label, "question_id": question.id})
                    continue
                n_pairs += 1
                prompt = build_prompt(group, question, style)
                base = {"prompt": prompt, "group": group.label, "question_id": question.id}
                if mode.kind == "explicit":
                    target = {opt.letter: p for opt, p in zip(question.options, human.probs)}
                    fh.write(json.dumps({**base, "target": target}) + "\n")
                    n_lines += 1
                elif mode.kind == "one_hot":
                    letter = question.options[metrics.one_hot(human).probs.index(1.0)].letter
                    fh.write(json.dumps({**base, "target": letter}) + "\n")
                    n_lines += 1
                else:
                    counts = metrics.quantize_counts(human, mode.n)
                    for opt, count in zip(question.options, counts):
                        for _ in range(count):
                            fh.write(json.dumps({**base, "target": opt.letter}) + "\n")
                            n_lines += 1
    manifest = {
        "mode": mode.tag,
        "style": style.value,
        "n_examples": n_lines,
        "n_pairs": n_pairs,
        "skipped": skipped,
        "sha256": hashlib.sha256(out_path.read_bytes()).hexdigest(),
        "hyperparameters": dict(LORA_HYPERPARAMETERS),
    }
    manifest_path = out_path.with_suffix(out_path.suffix + ".manifest.json")
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return manifest


def batch_loss(targets, predictions, objective: str, questions,
               cfg: metrics.MetricConfig = metrics.DEFAULT_CONFIG) -> float:
    """Mean per-pair loss; the reference an external trainer must match.

    ``objective`` is "kl" or "wd"; ``questions`` align with the pairs.
    """
    targets, predictions, questions = list(targets), list(predictions), list(questions)
    if not len(targets) == len(predictions) == len(questions):
        raise EvaluationError(
            f"length mismatch: {len(targets)} targets, {len(predictions)} predictions, "
            f"{len(questions)} questions"
        )
    if not targets:
        raise EvaluationError("empty batch")
    if objective == "kl":
        values = [metrics.kl_forward(t, p, cfg) for t, p in zip(targets, predictions)]
    elif objective == "wd":
        values = [metrics.wasserstein(t, p, q, cfg)
                  for t, p, q in zip(targets, predictions, questions)]
    else:
        raise ValueError(f"unknown objective {objective!r}")
    return float(np.mean(values))


def detect_overlap(questions_a, questions_b, embeddings, threshold: float = 0.87):
    """All cross pairs with cosine similarity >= threshold, most similar first."""
    for q in list(questions_a) + list(questions_b):
        if q.id not in embeddings:
            raise DatasetError(f"missing embedding for question {q.id!r}")

    def unit(qid):
        v = np.asarray(embeddings[qid], dtype=float)
        return v / np.linalg.norm(v)

    pairs = []
    for qa in questions_a:
        ua = unit(qa.id)
        for qb in questions_b:
            sim = float(ua @ unit(qb.id))
            if sim >= threshold:
                pairs.append((qa.id, qb.id, sim))
    pairs.sort(key=lambda item: (-item[2], item[0], item[1]))
    return pairs


def split(dataset: SurveyDataset, train_fraction: float, seed: int):
    """Wave-stratified question-level partition, deterministic under seed.

    The train side gets floor(fraction * total) questions, apportioned to
    waves by largest remainder.
    """
    if not 0.0 < train_fraction <= 1.0:
        raise ValueError(f"train_fraction must be in (0, 1], got {train_fraction}")
    by_wave: dict[str, list[str]] = {}
    for q in dataset.questions.values():
        by_wave.setdefault(q.wave, []).append(q.id)
    waves = sorted(by_wave)
    total = sum(len(by_wave[w]) for w in waves)
    target = int(np.floor(train_fraction * total))

    # largest-remainder apportionment of the train quota across waves
    exact = [train_fraction * len(by_wave[w]) for w in waves]
    quotas = [int(np.floor(e)) for e in exact]
    order = sorted(range(len(waves)), key=lambda i: (-(exact[i] - quotas[i]), waves[i]))
    for i in order[: target - sum(quotas)]:
        quotas[i] += 1

    rng = np.random.default_rng(seed)
    train, heldout = [], []
    for w, quota in zip(waves, quotas):
        ids = sorted(by_wave[w])
        perm = rng.permutation(len(ids))
        chosen = {ids[i] for i in perm[:quota]}
        train.extend(sorted(chosen))
        heldout.extend(sorted(set(ids) - chosen))
    return sorted(train), sorted(heldout)


def load_training_file(path):
    """Parse a JSONL export back into (prompt, group, question_id, target) dicts."""
    rows = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def reconstruct_targets(rows, dataset: SurveyDataset) -> dict[tuple[str, str], Distribution]:
    """Rebuild per-pair distributions from an export's rows.

    Explicit rows carry the distribution directly; letter rows (one-hot or
    augment replicas) are tallied into relative frequencies.
    """
    grouped: dict[tuple[str, str], list] = {}
    for row in rows:
        grouped.setdefault((row["group"], row["question_id"]), []).append(row["target"])
    result = {}
    for (group, qid), targets in grouped.items():
        question = dataset.questions[qid]
        if isinstance(targets[0], dict):
            if len(targets) != 1:
                raise DatasetError(f"multiple explicit rows for pair ({group}, {qid})")
            probs = tuple(targets[0].get(letter, 0.0) for letter in question.letters)
        else:
            counts = {letter: 0 for letter in question.letters}
            for letter in targets:
                counts[letter] += 1
            total = sum(counts.values())
            probs = tuple(counts[letter] / total for letter in question.letters)
        result[(group, qid)] = Distribution(qid, probs)
    return result
