"""Scoring predictors against human targets and aggregating results:
per-record WD/KL, bucketed means, relative improvement, intergroup
disagreement matrices, and log-log scaling fits."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .errors import DegenerateGapError, EvaluationError, MetricError, NoDataError
from .survey import Distribution, Question, Subpopulation, SurveyDataset, weighted_distribution

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EvalRecord:
    method: str
    group: str
    question_id: str
    wave: str
    wd: float
    kl: float

    def __post_init__(self):
        if self.wd < 0 or self.kl < 0:
            raise MetricError(f"negative metric in record for ({self.group}, {self.question_id})")


@dataclass
class EvalRun:
    records: list[EvalRecord]
    skipped: list[dict] = field(default_factory=list)


def evaluate(dataset: SurveyDataset, groups, questions, predictor, method_tag: str,
             cfg: metrics.MetricConfig = metrics.DEFAULT_CONFIG, workers: int = 1) -> EvalRun:
    """One record per (group, question) scoring ``predictor`` against the
    weighted human distribution.

    Pairs without human data or where the predictor raises are skipped and
    logged; the run aborts only if every pair fails. Records are sorted by
    (group, question id), so results are independent of completion order.
    """
    pairs = [(g, q) for g in groups for q in questions]
    if not pairs:
        raise EvaluationError("no (group, question) pairs requested")

    def score(pair):
        group, question = pair
        try:
            human = weighted_distribution(dataset, group, question)
        except NoDataError as exc:
            return None, {"group": group.label, "question_id": question.id,
                          "reason": f"no human data: {exc}"}
        try:
            predicted = predictor(group, question)
        except Exception as exc:  # predictor failures are data, not fatal
            return None, {"group": group.label, "question_id": question.id,
                          "reason": f"predictor failed: {exc}"}
        try:
            wd = metrics.wasserstein(human, predicted, question, cfg)
        except NoDataError as exc:  # e.g. an all-refusal human target
            return None, {"group": group.label, "question_id": question.id,
                          "reason": f"no scorable target: {exc}"}
        return EvalRecord(
            method=method_tag,
            group=group.label,
            question_id=question.id,
            wave=question.wave,
            wd=wd,
            kl=metrics.kl_forward(human, predicted, cfg),
        ), None

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(score, pairs))
    else:
        outcomes = [score(p) for p in pairs]

    records, skipped = [], []
    for record, skip in outcomes:
        if record is not None:
            records.append(record)
        else:
            skipped.append(skip)
            log.warning("skipped (%s, %s): %s", skip["group"], skip["question_id"], skip["reason"])
    if not records:
        raise EvaluationError(f"all {len(pairs)} (group, question) pairs failed")
    records.sort(key=lambda r: (r.method, r.group, r.question_id))
    return EvalRun(records=records, skipped=skipped)


def aggregate(records, by: str = "overall") -> dict[str, dict[str, float]]:
    """Unweighted means of wd and kl per bucket.

    ``by`` is one of overall, group, wave. The overall mean is the flat mean
    over records, not the mean of group means.
    """
    records = list(records)
    if not records:
        raise EvaluationError("cannot aggregate empty record list")
    if by == "overall":
        keyfn = lambda r: "overall"
    elif by == "group":
        keyfn = lambda r: r.group
    elif by == "wave":
        keyfn = lambda r: r.wave
    else:
        raise ValueError(f"unknown aggregation axis {by!r}")
    buckets: dict[str, list[EvalRecord]] = {}
    for r in records:
        buckets.setdefault(keyfn(r), []).append(r)
    return {
        key: {
            "wd": float(np.mean([r.wd for r in rs])),
            "kl": float(np.mean([r.kl for r in rs])),
            "n": len(rs),
        }
        for key, rs in sorted(buckets.items())
    }


def relative_improvement(lower: float, zero_shot: float, ours: float) -> float:
    """Fraction of the zero-shot-to-lower-bound gap closed by a method."""
    if zero_shot <= lower:
        raise DegenerateGapError(
            f"zero-shot WD {zero_shot} does not exceed lower bound {lower}"
        )
    return (zero_shot - ours) / (zero_shot - lower)


@dataclass(frozen=True)
class DisagreementMatrix:
    axis: tuple[str, ...]
    values: tuple[tuple[float, ...], ...]
    source_kind: str  # "human" or "model"

    def as_array(self) -> np.ndarray:
        return np.array(self.values)

    def to_dict(self) -> dict:
        return {"axis": list(self.axis), "values": [list(row) for row in self.values],
                "source_kind": self.source_kind}


def intergroup_matrix(targets: dict[str, dict[str, Distribution]],
                      sources: dict[str, dict[str, Distribution]],
                      questions, cfg: metrics.MetricConfig = metrics.DEFAULT_CONFIG,
                      source_kind: str = "human") -> DisagreementMatrix:
    """Entry (t, s) is the mean WD over questions between target group t's
    distributions and source group s's distributions.

    Only questions covered by every group on both axes contribute, so the
    matrix entries share one denominator.
    """
    q_by_id = {q.id: q for q in questions}
    common = set(q_by_id)
    for dists in list(targets.values()) + list(sources.values()):
        common &= set(dists)
    if not common:
        raise EvaluationError("no question covered by all groups")
    ordered_q = sorted(common)
    axis_t = tuple(targets)
    axis_s = tuple(sources)
    if axis_t != axis_s:
        raise EvaluationError("target and source group axes must match")
    values = tuple(
        tuple(
            float(np.mean([
                metrics.wasserstein(targets[t][qid], sources[s][qid], q_by_id[qid], cfg)
                for qid in ordered_q
            ]))
            for s in axis_s
        )
        for t in axis_t
    )
    return DisagreementMatrix(axis=axis_t, values=values, source_kind=source_kind)


def human_distribution_map(dataset: SurveyDataset, groups, questions) -> dict[str, dict[str, Distribution]]:
    """Per-group maps of question id -> weighted human distribution.

    Pairs without data are skipped, as are all-refusal targets (they carry
    no substantive mass, so no WD can be computed against them).
    """
    result: dict[str, dict[str, Distribution]] = {}
    for g in groups:
        dists = {}
        for q in questions:
            try:
                dist = weighted_distribution(dataset, g, q)
            except NoDataError:
                continue
            if sum(dist.probs[i] for i in q.substantive_indices) <= 0.0:
                continue
            dists[q.id] = dist
        result[g.label] = dists
    return result


@dataclass(frozen=True)
class ScalingFit:
    slope: float
    intercept: float
    points: tuple[tuple[float, float], ...]


def fit_scaling(points) -> ScalingFit:
    """Least-squares line through (log10 fraction, log10 wd)."""
    points = [(float(f), float(w)) for f, w in points]
    if len({f for f, _ in points}) < 2:
        raise EvaluationError("scaling fit needs >=2 distinct fractions")
    for f, w in points:
        if not 0.0 < f <= 1.0:
            raise EvaluationError(f"fraction {f} outside (0, 1]")
        if w <= 0.0:
            raise EvaluationError(f"nonpositive wd {w}")
    xs = np.log10([f for f, _ in points])
    ys = np.log10([w for _, w in points])
    slope, intercept = np.polyfit(xs, ys, 1)
    return ScalingFit(slope=float(slope), intercept=float(intercept), points=tuple(points))


def predict(fit: ScalingFit, fraction: float) -> float:
    if fraction <= 0.0:
        raise EvaluationError(f"nonpositive fraction {fraction}")
    return float(10.0 ** (fit.intercept + fit.slope * np.log10(fraction)))
