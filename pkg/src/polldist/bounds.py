"""Performance brackets per group: uniform-predictor upper bound and
respondent-level bootstrap lower bound on the mean Wasserstein distance."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import metrics
from .errors import NoDataError
from .survey import Question, Subpopulation, SurveyDataset, members, weighted_distribution


@dataclass(frozen=True)
class BootstrapReport:
    group: str
    mean_wd: float
    ci_low: float
    ci_high: float
    R: int
    seed: int

    def __post_init__(self):
        if self.R < 1:
            raise ValueError(f"R must be >= 1, got {self.R}")
        if not self.ci_low <= self.mean_wd <= self.ci_high:
            raise ValueError(
                f"inconsistent report: ci [{self.ci_low}, {self.ci_high}] vs mean {self.mean_wd}"
            )

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "BootstrapReport":
        return cls(**json.loads(text))


def upper_bound(dataset: SurveyDataset, group: Subpopulation, questions,
                cfg: metrics.MetricConfig = metrics.DEFAULT_CONFIG) -> float:
    """Mean WD between the group's answer distributions and the uniform predictor."""
    values = []
    for q in questions:
        try:
            human = weighted_distribution(dataset, group, q)
            values.append(metrics.wasserstein(human, metrics.uniform(q), q, cfg))
        except NoDataError:
            continue
    if not values:
        raise NoDataError(f"group {group.label!r} has no usable questions", group=group.label)
    return float(np.mean(values))


def _nearest_rank(sorted_values: np.ndarray, percentile: float) -> float:
    rank = max(1, math.ceil(percentile / 100.0 * len(sorted_values)))
    return float(sorted_values[rank - 1])


def bootstrap_lower_bound(dataset: SurveyDataset, group: Subpopulation, questions,
                          R: int, seed: int,
                          cfg: metrics.MetricConfig = metrics.DEFAULT_CONFIG) -> BootstrapReport:
    """Bootstrap the group's respondents and score each resampled cohort
    against the observed answer distributions.

    Each replicate draws n_g respondents with replacement (weights travel
    with the respondents), recomputes per-question weighted distributions
    over the sampled cohort, and records the mean WD against the full-data
    distributions. Questions with no sampled respondent are skipped in that
    replicate. Replicate r uses an RNG stream derived from (seed, r), so
    serial and parallel execution agree bit for bit.
    """
    if R < 1:
        raise ValueError(f"R must be >= 1, got {R}")
    member_ids = members(dataset, group)
    if not member_ids:
        raise NoDataError(f"group {group.label!r} is empty", group=group.label)
    pos = {rid: i for i, rid in enumerate(member_ids)}
    n_g = len(member_ids)
    weights = np.array([dataset.respondents[rid].weight for rid in member_ids])

    # Per-question response arrays restricted to group members, plus the
    # full-data reference distribution.
    prepared = []
    for q in questions:
        try:
            human = weighted_distribution(dataset, group, q)
        except NoDataError:
            continue
        if sum(human.probs[i] for i in q.substantive_indices) <= 0.0:
            continue  # all-refusal target, not scorable by WD
        recs = sorted(
            (r for r in dataset.responses_to(q.id) if r.respondent_id in pos),
            key=lambda r: r.respondent_id,
        )
        idx = np.array([pos[r.respondent_id] for r in recs], dtype=np.intp)
        opts = np.array([r.option_index for r in recs], dtype=np.intp)
        prepared.append((q, human, idx, opts))
    if not prepared:
        raise NoDataError(f"group {group.label!r} has no usable questions", group=group.label)

    replicate_means = np.empty(R)
    for r in range(R):
        rng = np.random.default_rng([seed, r])
        counts = np.bincount(rng.integers(0, n_g, size=n_g), minlength=n_g)
        wds = []
        for q, human, idx, opts in prepared:
            w_eff = counts[idx] * weights[idx]
            total = w_eff.sum()
            if total <= 0.0:
                continue
            probs = np.bincount(opts, weights=w_eff, minlength=len(q.options)) / total
            pi_r = _as_distribution(q.id, probs)
            try:
                wds.append(metrics.wasserstein(human, pi_r, q, cfg))
            except NoDataError:  # sampled cohort refused en masse
                continue
        replicate_means[r] = float(np.mean(wds)) if wds else 0.0

    ordered = np.sort(replicate_means)
    return BootstrapReport(
        group=group.label,
        mean_wd=float(replicate_means.mean()),
        ci_low=min(_nearest_rank(ordered, 2.5), float(replicate_means.mean())),
        ci_high=max(_nearest_rank(ordered, 97.5), float(replicate_means.mean())),
        R=R,
        seed=seed,
    )


def _as_distribution(question_id, probs):
    from .survey import Distribution

    probs = np.asarray(probs, dtype=float)
    total = probs.sum()
    return Distribution(question_id, tuple(probs / total))
