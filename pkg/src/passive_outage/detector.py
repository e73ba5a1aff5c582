"""Per-address Bayesian reachability tracking over timebins."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, ModelError, StructuralError
from .training import AddressModel

UP = "up"
DOWN = "down"
UNCERTAIN = "uncertain"


@dataclass(frozen=True)
class DetectorConfig:
    theta_a: float = 0.6
    b_min: float = 0.1
    b_max: float = 0.95
    b_init: float | None = None
    # likelihood of an empty timebin while the address is down
    p_neg_given_down: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.b_min < self.theta_a < self.b_max <= 1.0:
            raise ConfigError("need 0 <= b_min < theta_a < b_max <= 1")
        if not 0.0 < self.p_neg_given_down <= 1.0:
            raise ConfigError("p_neg_given_down must lie in (0, 1]")
        if self.b_init is not None and not self.b_min <= self.b_init <= self.b_max:
            raise ConfigError("b_init must lie within [b_min, b_max]")

    @property
    def initial_belief(self) -> float:
        return self.b_max if self.b_init is None else self.b_init


def status_of(belief: float, threshold: float, b_max: float) -> str:
    if belief < threshold:
        return DOWN
    if belief >= b_max:
        return UP
    return UNCERTAIN


@dataclass(frozen=True)
class BeliefState:
    belief: float
    status: str

    @classmethod
    def from_belief(cls, belief: float, cfg: DetectorConfig) -> "BeliefState":
        return cls(belief, status_of(belief, cfg.theta_a, cfg.b_max))

    @classmethod
    def initial(cls, cfg: DetectorConfig) -> "BeliefState":
        return cls.from_belief(cfg.initial_belief, cfg)


class AddressBin(NamedTuple):
    start: float
    end: float
    positive: bool
    state: BeliefState


def posterior(belief: float, positive: bool, pi: float, p_neg_given_down: float = 1.0) -> float:
    """Unclamped belief after one timebin.

    Positive bin: pi*B / (pi*B + (1 - P(neg|down)) * (1 - B)).
    Negative bin: (1-pi)*B / ((1-pi)*B + P(neg|down) * (1 - B)).
    """
    if positive:
        num = pi * belief
        den = num + (1.0 - p_neg_given_down) * (1.0 - belief)
    else:
        num = (1.0 - pi) * belief
        den = num + p_neg_given_down * (1.0 - belief)
    if den <= 0.0:
        raise ModelError(f"degenerate update (belief={belief}, pi={pi}, positive={positive})")
    return num / den


def observe_bin(
    prior: BeliefState,
    positive: bool,
    model: AddressModel,
    cfg: DetectorConfig,
) -> BeliefState:
    if not model.measurable:
        raise ModelError(f"{model.address} is not measurable")
    pi = model.pi
    if not 0.0 < pi <= 1.0:
        raise ModelError(f"active probability {pi} outside (0, 1] for {model.address}")
    raw = posterior(prior.belief, positive, pi, cfg.p_neg_given_down)
    return BeliefState.from_belief(min(cfg.b_max, max(cfg.b_min, raw)), cfg)


def bin_edges(window: tuple[float, float], timebin: float) -> list[tuple[float, float]]:
    """Bins of ``timebin`` aligned to the window start; the last one is cut at the window end."""
    start, end = window
    if end <= start:
        raise StructuralError("empty detection window")
    n = math.ceil((end - start) / timebin)
    return [(start + i * timebin, min(start + (i + 1) * timebin, end)) for i in range(n)]


def detect_address_timeline(
    timestamps: Sequence[float] | np.ndarray,
    model: AddressModel,
    window: tuple[float, float],
    cfg: DetectorConfig,
    initial: BeliefState | None = None,
) -> list[AddressBin]:
    """Run belief updates for one address across every timebin of ``window``.

    ``initial`` carries the final state of a previous window; otherwise the
    belief starts at ``cfg.initial_belief``.
    """
    if model.timebin is None:
        raise ModelError(f"{model.address} has no timebin (unmeasurable)")
    start, end = window
    ts = np.asarray(timestamps, dtype=float)
    if ts.size and (ts.min() < start or ts.max() >= end):
        raise StructuralError("observations outside the detection window")
    edges = bin_edges(window, model.timebin)
    occupied = np.zeros(len(edges), dtype=bool)
    if ts.size:
        occupied[((ts - start) // model.timebin).astype(np.int64)] = True
    state = initial if initial is not None else BeliefState.initial(cfg)
    out = []
    for (lo, hi), positive in zip(edges, occupied.tolist()):
        state = observe_bin(state, positive, model, cfg)
        out.append(AddressBin(lo, hi, positive, state))
    return out
