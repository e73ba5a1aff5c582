"""Passive Internet outage detection from per-address traffic history."""

from .aggregator import BlockReport, OutageEvent, block_belief, extract_events, merge_to_block_timeline
from .config import PipelineConfig, fixed_timebin
from .detector import BeliefState, DetectorConfig, detect_address_timeline, observe_bin, posterior
from .evaluator import (
    ConfusionMatrix,
    GroundTruthTimeline,
    compare_durations,
    compare_events,
    metrics,
    precision_aware_compare,
)
from .ingest import BlockId, FlowObservation, anonymize_address, block_of, filter_spoofed, parse_flow_records
from .pipeline import DetectionResult, detect_blocks
from .simulator import ScenarioSpec, generate_trace, run_scenario
from .training import AddressModel, TrainingConfig, classify_address, compute_active_probability, train_models

__version__ = "0.1.0"
