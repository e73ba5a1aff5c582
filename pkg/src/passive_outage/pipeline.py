"""Glue between training, per-address detection and block aggregation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Mapping, Sequence

from .aggregator import BlockReport, build_block_report
from .detector import AddressBin, BeliefState, DetectorConfig, detect_address_timeline
from .evaluator import (
    EvaluationReport,
    GroundTruthTimeline,
    format_number,
    evaluate_reports,
    format_metric,
    metrics,
)
from .ingest import BlockId, FlowObservation, IPAddress
from .training import AddressModel, group_by_address, train_models

if TYPE_CHECKING:
    from .config import PipelineConfig

logger = logging.getLogger(__name__)


@dataclass
class DetectionResult:
    window: tuple[float, float]
    reports: dict[BlockId, BlockReport]
    address_timelines: dict[IPAddress, list[AddressBin]] = field(default_factory=dict)
    untrained: set[IPAddress] = field(default_factory=set)

    def final_states(self) -> dict[IPAddress, BeliefState]:
        return {addr: tl[-1].state for addr, tl in self.address_timelines.items() if tl}

    @property
    def events(self):
        return [ev for blk in sorted(self.reports) for ev in self.reports[blk].events]


def detect_blocks(
    observations: Iterable[FlowObservation],
    models: Mapping[BlockId, Sequence[AddressModel]],
    window: tuple[float, float],
    cfg: DetectorConfig,
    initial_states: Mapping[IPAddress, BeliefState] | None = None,
) -> DetectionResult:
    """Detect every trained block over ``window``.

    Observations outside the window are ignored.  Addresses without a model are
    reported as untrained and excluded; unmeasurable models do not contribute.
    """
    start, end = window
    by_addr = group_by_address(o for o in observations if start <= o.timestamp < end)
    known = {m.address for members in models.values() for m in members}
    untrained = set(by_addr) - known
    if untrained:
        logger.info("%d observed addresses have no model and are excluded", len(untrained))
    initial_states = initial_states or {}
    result = DetectionResult(window, {}, untrained=untrained)
    for blk in sorted(models):
        members = []
        for model in models[blk]:
            if not model.measurable:
                continue
            timeline = detect_address_timeline(
                by_addr.get(model.address, ()), model, window, cfg,
                initial=initial_states.get(model.address),
            )
            result.address_timelines[model.address] = timeline
            members.append((model, timeline))
        result.reports[blk] = build_block_report(blk, members, window, cfg)
    return result


@dataclass
class PipelineRun:
    config: "PipelineConfig"
    models: dict[BlockId, list[AddressModel]]
    detection: DetectionResult
    evaluation: EvaluationReport


def run_pipeline(
    observations: Sequence[FlowObservation],
    truth: Mapping[BlockId, GroundTruthTimeline],
    window: tuple[float, float],
    cfg: "PipelineConfig",
) -> PipelineRun:
    """Train on the d days before ``window``, detect over it, evaluate against ``truth``."""
    models = train_models(observations, window[0], cfg.training)
    # blocks never seen in training still count against coverage
    for blk in truth:
        models.setdefault(blk, [])
    detection = detect_blocks(observations, models, window, cfg.detector)
    return PipelineRun(cfg, models, detection, evaluate_reports(detection.reports, truth, window))


SWEEP_COLUMNS = (
    "param", "value", "total_blocks", "measurable_blocks", "coverage",
    "ta", "to", "fa", "fo", "ppv", "recall", "tnr", "direct_tnr",
)


def sweep_config(cfg: "PipelineConfig", param: str, value: str) -> "PipelineConfig":
    """Variant of ``cfg`` for one sweep point.

    ``theta_b`` sets the belief threshold.  ``timebin`` takes either one duration
    (a fixed-timebin run) or ``short/long`` (a hybrid run).
    """
    from .config import fixed_timebin, parse_value

    if param == "theta_b":
        return cfg.with_overrides(theta_a=float(value))
    if param == "timebin":
        if "/" in value:
            short, long_ = (int(v) for v in value.split("/"))
            return cfg.with_overrides(t_short=short, t_long=long_)
        return fixed_timebin(cfg, int(value))
    return cfg.with_overrides(**{param: parse_value(value)})


def sweep(
    observations: Sequence[FlowObservation],
    truth: Mapping[BlockId, GroundTruthTimeline],
    window: tuple[float, float],
    cfg: "PipelineConfig",
    param: str,
    values: Sequence[str],
) -> list[list[str]]:
    """One row per value: coverage and precision-aware cells/metrics (plus direct TNR)."""
    rows = []
    for value in values:
        ev = run_pipeline(observations, truth, window, sweep_config(cfg, param, value)).evaluation
        pa = ev.precision_aware
        rows.append([
            param, value, str(ev.total_blocks), str(ev.measurable_blocks), format_metric(ev.coverage),
            *(format_number(c) for c in pa.cells()), *metrics(pa).formatted(),
            format_metric(metrics(ev.direct).tnr),
        ])
    return rows
