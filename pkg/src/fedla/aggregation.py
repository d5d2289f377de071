"""Server-side client weighting and model averaging.

Weights are computed in exact rational arithmetic from the integer label
counts and rounded to float only at the end.  Two weighting rules that agree
mathematically therefore agree bit for bit, which keeps strategy comparisons
exact when client histograms coincide.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, List, Sequence

import numpy as np

from .errors import DegenerateInputError, InvalidInputError, NumericalError, ProtocolError

log = logging.getLogger(__name__)

STRATEGIES = ("fedavg", "fedavgl", "fedla", "fedprox", "fedprox_la")
PROXIMAL_STRATEGIES = frozenset({"fedprox", "fedprox_la"})


@dataclass(frozen=True)
class ClientUpdate:
    client_id: int
    params: np.ndarray
    histogram: np.ndarray
    sample_count: int

    @classmethod
    def from_histogram(cls, client_id, params, histogram):
        histogram = np.asarray(histogram, dtype=np.int64)
        return cls(client_id, params, histogram, int(histogram.sum()))


def _check_updates(updates):
    if not updates:
        raise InvalidInputError("no client updates")
    ids = [u.client_id for u in updates]
    if len(set(ids)) != len(ids):
        raise ProtocolError(f"duplicate client ids in round: {ids}")


def _normalize(updates, raw: Sequence[Fraction], what: str) -> Dict[int, float]:
    total = sum(raw, Fraction(0))
    if total == 0:
        raise DegenerateInputError(f"all clients have zero {what}")
    for u, r in zip(updates, raw):
        if r == 0:
            log.warning("client %s has zero %s and receives weight 0", u.client_id, what)
    return {u.client_id: float(r / total) for u, r in zip(updates, raw)}


def compute_fedavg_weights(updates: Sequence[ClientUpdate]) -> Dict[int, float]:
    """Weight proportional to each client's sample count."""
    _check_updates(updates)
    return _normalize(updates, [Fraction(int(u.sample_count)) for u in updates], "samples")


def compute_fedavgl_weights(updates: Sequence[ClientUpdate]) -> Dict[int, float]:
    """Weight proportional to each client's total label count, ignoring class identity."""
    _check_updates(updates)
    return _normalize(updates, [Fraction(int(np.sum(u.histogram))) for u in updates], "labels")


def compute_fedla_weights(updates: Sequence[ClientUpdate]) -> Dict[int, float]:
    """Label-aware weights.

    For every label held by at least one participant, each client gets its share
    of that label's round total.  A client's raw weight is the sum of its shares
    over labels; raw weights are then normalized to sum to one.  Labels nobody
    holds this round contribute nothing.
    """
    _check_updates(updates)
    counts = [[int(c) for c in u.histogram] for u in updates]
    n_labels = len(counts[0])
    if any(len(row) != n_labels for row in counts):
        raise ProtocolError("client histograms have different lengths")
    raw = [Fraction(0)] * len(updates)
    for j in range(n_labels):
        label_total = sum(row[j] for row in counts)
        if label_total == 0:
            continue
        for i, row in enumerate(counts):
            raw[i] += Fraction(row[j], label_total)
    return _normalize(updates, raw, "labels")


_WEIGHT_RULES = {
    "fedavg": compute_fedavg_weights,
    "fedprox": compute_fedavg_weights,
    "fedavgl": compute_fedavgl_weights,
    "fedla": compute_fedla_weights,
    "fedprox_la": compute_fedla_weights,
}


def weights_for(strategy: str, updates: Sequence[ClientUpdate]) -> Dict[int, float]:
    try:
        rule = _WEIGHT_RULES[strategy]
    except KeyError:
        raise InvalidInputError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}") from None
    return rule(updates)


def uses_proximal_term(strategy: str) -> bool:
    return strategy in PROXIMAL_STRATEGIES


def aggregate(updates: Sequence[ClientUpdate], weights: Dict[int, float]) -> np.ndarray:
    """Weighted average of client parameters.

    Accumulates ``sum_i w_i * (p_i - p_0)`` onto the first client's parameters,
    so identical client models come back unchanged regardless of float rounding
    in the weights.
    """
    _check_updates(updates)
    ids = {u.client_id for u in updates}
    if ids != set(weights):
        raise ProtocolError(
            f"weights cover clients {sorted(weights)} but updates come from {sorted(ids)}"
        )
    base = updates[0].params
    if any(u.params.shape != base.shape for u in updates):
        raise ProtocolError("client parameter vectors differ in length")
    delta = np.zeros_like(base, dtype=float)
    for u in updates[1:]:
        delta += weights[u.client_id] * (u.params - base)
    out = base + delta
    if not np.all(np.isfinite(out)):
        raise NumericalError("non-finite aggregated parameters")
    return out
