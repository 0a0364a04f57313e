"""Distances and transforms on answer distributions.

All functions are pure. Refusal options never carry ordinals, so the
Wasserstein distance is computed over substantive options only, after
renormalizing both distributions; forward KL operates over the full
option vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import MetricError, NoDataError
from .survey import Distribution, Question


@dataclass(frozen=True)
class MetricConfig:
    #: divide the WD by (n_substantive - 1) so each question's value lies in [0, 1]
    normalize_wd: bool = True
    #: floor applied to model probabilities inside the KL log
    kl_epsilon: float = 1e-10

    def __post_init__(self):
        if not 0.0 < self.kl_epsilon <= 1e-3:
            raise MetricError(f"kl_epsilon must be in (0, 1e-3], got {self.kl_epsilon}")


DEFAULT_CONFIG = MetricConfig()


def _check_aligned(p: Distribution, q: Distribution, question: Question) -> None:
    n = len(question.options)
    if len(p.probs) != n or len(q.probs) != n:
        raise MetricError(
            f"distributions not aligned to question {question.id!r}: "
            f"lengths {len(p.probs)}, {len(q.probs)} vs {n} options"
        )


def wasserstein(p: Distribution, q: Distribution, question: Question,
                cfg: MetricConfig = DEFAULT_CONFIG) -> float:
    """1-D optimal transport cost between ``p`` and ``q`` on the question's ordinal scale.

    Equals the sum of absolute CDF differences over ordinal positions with
    unit spacing. Refusal mass is dropped and the remainder renormalized.
    """
    _check_aligned(p, q, question)
    sub = [(question.options[i].ordinal, i) for i in question.substantive_indices]
    if len(sub) < 2:
        raise MetricError(f"question {question.id!r} needs >=2 substantive options for WD")
    sub.sort()
    p_sub = np.array([p.probs[i] for _, i in sub])
    q_sub = np.array([q.probs[i] for _, i in sub])
    p_mass, q_mass = p_sub.sum(), q_sub.sum()
    if p_mass <= 0.0 or q_mass <= 0.0:
        raise NoDataError(
            f"all-refusal distribution on question {question.id!r}", question_id=question.id
        )
    delta = np.cumsum(p_sub / p_mass - q_sub / q_mass)
    wd = float(np.abs(delta[:-1]).sum())  # last CDF term is 0 by construction
    if cfg.normalize_wd:
        wd /= len(sub) - 1
    return wd


def kl_forward(p_h: Distribution, p_theta: Distribution,
               cfg: MetricConfig = DEFAULT_CONFIG) -> float:
    """Forward KL divergence D(p_h || p_theta) in nats.

    Model-side zeros are floored at ``cfg.kl_epsilon``; target-side zeros
    contribute nothing.
    """
    if len(p_h.probs) != len(p_theta.probs):
        raise MetricError(
            f"length mismatch: {len(p_h.probs)} vs {len(p_theta.probs)}"
        )
    total = 0.0
    for ph, pt in zip(p_h.probs, p_theta.probs):
        if ph > 0.0:
            total += ph * math.log(ph / max(pt, cfg.kl_epsilon))
    return max(total, 0.0)


def one_hot(p: Distribution) -> Distribution:
    """Collapse to a point mass on the most probable option (ties -> lowest index)."""
    if not p.probs:
        raise MetricError("cannot one-hot an empty distribution")
    best = max(range(len(p.probs)), key=lambda i: (p.probs[i], -i))
    return Distribution(p.question_id, tuple(1.0 if i == best else 0.0 for i in range(len(p.probs))))


def quantize_counts(p: Distribution, n: int) -> tuple[int, ...]:
    """Integer counts summing to ``n`` approximating ``p`` (largest-remainder method).

    Ties in the remainders are broken toward the lower option index, so the
    result is deterministic.
    """
    if n < 1:
        raise MetricError(f"replication factor must be >= 1, got {n}")
    scaled = [prob * n for prob in p.probs]
    counts = [int(math.floor(s)) for s in scaled]
    shortfall = n - sum(counts)
    order = sorted(range(len(counts)), key=lambda i: (-(scaled[i] - counts[i]), i))
    for i in order[:shortfall]:
        counts[i] += 1
    return tuple(counts)


def uniform(question: Question) -> Distribution:
    """Equal mass over substantive options; refusal options get zero."""
    sub = question.substantive_indices
    if not sub:
        raise MetricError(f"question {question.id!r} has no substantive options")
    share = 1.0 / len(sub)
    return Distribution(
        question.id,
        tuple(share if i in sub else 0.0 for i in range(len(question.options))),
    )
