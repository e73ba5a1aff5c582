"""Synthetic traces with known traffic rates and injected outages.

Traffic is per-bin Bernoulli: every ``rate_bin`` that does not overlap an outage
carries one observation with probability ``per_bin_rate``, at a uniform offset
inside the bin.  Outages silence the address completely unless ``leak_rate`` is
set, in which case silenced bins still leak an observation with that probability.
"""

from __future__ import annotations

import hashlib
import ipaddress
import json
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from .config import PipelineConfig
from .detector import bin_edges
from .errors import ConfigError
from .evaluator import EvaluationReport, GroundTruthTimeline
from .ingest import BlockId, FlowObservation, IPAddress
from .pipeline import DetectionResult, run_pipeline
from .training import DAY, AddressModel

# 2019-01-10 00:00:00 UTC
DEFAULT_EPOCH = 1547078400


@dataclass(frozen=True)
class AddressSpec:
    per_bin_rate: float
    rate_bin: int = 300
    host: int | None = None


@dataclass(frozen=True)
class BlockSpec:
    block: BlockId
    addresses: tuple[AddressSpec, ...]
    outages: tuple[tuple[float, float], ...] = ()

    def address_of(self, index: int) -> IPAddress:
        spec = self.addresses[index]
        host = index + 1 if spec.host is None else spec.host
        return ipaddress.ip_address(self.block.prefix + host)


@dataclass(frozen=True)
class ScenarioSpec:
    seed: int
    window: tuple[float, float]
    blocks: tuple[BlockSpec, ...]
    leak_rate: float = 0.0

    def validate(self) -> None:
        start, end = self.window
        if end <= start:
            raise ConfigError("scenario window is empty")
        if not 0.0 <= self.leak_rate <= 1.0:
            raise ConfigError("leak_rate must be a probability")
        seen = set()
        for bs in self.blocks:
            if bs.block in seen:
                raise ConfigError(f"block {bs.block} listed twice")
            seen.add(bs.block)
            host_limit = 1 << (32 - 24 if bs.block.family == "v4" else 128 - 48)
            hosts = set()
            for i, a in enumerate(bs.addresses):
                if not 0.0 <= a.per_bin_rate <= 1.0:
                    raise ConfigError(f"per_bin_rate {a.per_bin_rate} is not a probability")
                if a.rate_bin <= 0:
                    raise ConfigError("rate_bin must be positive")
                host = i + 1 if a.host is None else a.host
                if not 0 <= host < host_limit or host in hosts:
                    raise ConfigError(f"bad or duplicate host {host} in {bs.block}")
                hosts.add(host)
            prev_end = None
            for o_start, o_end in sorted(bs.outages):
                if o_end <= o_start:
                    raise ConfigError(f"empty outage [{o_start},{o_end})")
                if o_start < start or o_end > end:
                    raise ConfigError(f"outage [{o_start},{o_end}) outside the scenario window")
                if prev_end is not None and o_start < prev_end:
                    raise ConfigError(f"overlapping outages in {bs.block}")
                prev_end = o_end

    def to_dict(self) -> dict[str, Any]:
        return {
            "seed": self.seed,
            "window": list(self.window),
            "leak_rate": self.leak_rate,
            "blocks": [
                {
                    "block": str(bs.block),
                    "addresses": [
                        {"per_bin_rate": a.per_bin_rate, "rate_bin": a.rate_bin, "host": a.host}
                        for a in bs.addresses
                    ],
                    "outages": [list(o) for o in bs.outages],
                }
                for bs in self.blocks
            ],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ScenarioSpec":
        try:
            spec = cls(
                seed=int(data["seed"]),
                window=(float(data["window"][0]), float(data["window"][1])),
                leak_rate=float(data.get("leak_rate", 0.0)),
                blocks=tuple(
                    BlockSpec(
                        BlockId.parse(b["block"]),
                        tuple(
                            AddressSpec(float(a["per_bin_rate"]), int(a.get("rate_bin", 300)), a.get("host"))
                            for a in b["addresses"]
                        ),
                        tuple((float(s), float(e)) for s, e in b.get("outages", ())),
                    )
                    for b in data["blocks"]
                ),
            )
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise ConfigError(f"invalid scenario: {exc}") from exc
        spec.validate()
        return spec

    @classmethod
    def load(cls, path) -> "ScenarioSpec":
        with open(path) as fh:
            try:
                return cls.from_dict(json.load(fh))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"scenario file {path} is not valid JSON: {exc}") from exc


def _address_rng(seed: int, address: IPAddress) -> np.random.Generator:
    digest = hashlib.sha256(address.packed).digest()
    return np.random.default_rng([seed, int.from_bytes(digest[:8], "big")])


def _address_trace(
    spec: AddressSpec, address: IPAddress, outages, window, seed: int, leak_rate: float,
) -> list[FlowObservation]:
    rng = _address_rng(seed, address)
    edges = np.asarray(bin_edges(window, spec.rate_bin), dtype=float)
    lo, hi = edges[:, 0], edges[:, 1]
    emit_draw = rng.random(len(edges))
    offset_draw = rng.random(len(edges))
    silenced = np.zeros(len(edges), dtype=bool)
    for o_start, o_end in outages:
        silenced |= (lo < o_end) & (hi > o_start)
    emit = emit_draw < np.where(silenced, leak_rate, spec.per_bin_rate)
    # microsecond resolution keeps CSV round trips exact
    span_us = np.round((hi - lo) * 1_000_000)
    stamps = lo + np.floor(offset_draw * span_us) / 1_000_000
    return [FlowObservation(float(t), address) for t in stamps[emit]]


def generate_trace(
    spec: ScenarioSpec,
) -> tuple[list[FlowObservation], dict[BlockId, GroundTruthTimeline]]:
    """Observations (time-ordered) plus per-block ground truth covering the window."""
    spec.validate()
    observations: list[FlowObservation] = []
    truth: dict[BlockId, GroundTruthTimeline] = {}
    for bs in spec.blocks:
        for i, aspec in enumerate(bs.addresses):
            observations.extend(
                _address_trace(aspec, bs.address_of(i), bs.outages, spec.window, spec.seed, spec.leak_rate)
            )
        truth[bs.block] = GroundTruthTimeline.from_outages(bs.block, spec.window, bs.outages)
    observations.sort(key=lambda o: (o.timestamp, int(o.src), o.src.version))
    return observations, dict(sorted(truth.items()))


@dataclass
class ScenarioResult:
    config: PipelineConfig
    window: tuple[float, float]
    observations: list[FlowObservation]
    truth: dict[BlockId, GroundTruthTimeline]
    models: dict[BlockId, list[AddressModel]]
    detection: DetectionResult
    evaluation: EvaluationReport = field(repr=False)


def detection_window(spec: ScenarioSpec, cfg: PipelineConfig) -> tuple[float, float]:
    start = spec.window[0] + cfg.training.d_days * DAY
    if spec.window[1] - start < cfg.training.t_long:
        raise ConfigError("detection window is shorter than one timebin")
    return start, spec.window[1]


def run_scenario(spec: ScenarioSpec, cfg: PipelineConfig) -> ScenarioResult:
    """Train on the first d days of the scenario, detect on the rest, evaluate."""
    window = detection_window(spec, cfg)
    observations, truth = generate_trace(spec)
    run = run_pipeline(observations, truth, window, cfg)
    return ScenarioResult(cfg, window, observations, truth, run.models, run.detection, run.evaluation)


# ---------------------------------------------------------------------------
# Ready-made scenarios
# ---------------------------------------------------------------------------

def example_block(family: str, index: int = 0) -> BlockId:
    if family == "v4":
        return BlockId("v4", int(ipaddress.ip_address("192.0.2.0")) + (index << 8))
    if family == "v6":
        return BlockId("v6", int(ipaddress.ip_address("2001:db8::")) + (index << 80))
    raise ConfigError(f"unknown family {family!r}")


def frequent_gap_scenario(
    seed: int = 1, family: str = "v4", epoch: int = DEFAULT_EPOCH,
    rate: float = 0.9, gap: tuple[int, int] = (68160, 73560),
) -> ScenarioSpec:
    """One frequent address, 2 training days, then a day with a 90-minute outage.

    The default gap runs 18:56-20:26 on the detection day.
    """
    day3 = epoch + 2 * DAY
    block = example_block(family)
    return ScenarioSpec(
        seed, (epoch, epoch + 3 * DAY),
        (BlockSpec(block, (AddressSpec(rate, 300, 7),), ((day3 + gap[0], day3 + gap[1]),)),),
    )


def sparse_scenario(
    seed: int = 1, family: str = "v4", epoch: int = DEFAULT_EPOCH,
    rate: float = 0.6, rate_bin: int = 600, outages: tuple[tuple[float, float], ...] = (),
) -> ScenarioSpec:
    """One sparse address (``rate`` per ``rate_bin``) over 3 days."""
    return ScenarioSpec(
        seed, (epoch, epoch + 3 * DAY),
        (BlockSpec(example_block(family), (AddressSpec(rate, rate_bin, 9),), tuple(outages)),),
    )


def hybrid_population(
    seed: int = 1, family: str = "v4", epoch: int = DEFAULT_EPOCH,
    n_addresses: int = 1000, per_block: int = 5, frequent_share: float = 0.8,
    frequent_rate: float = 0.9, sparse_rate: float = 0.5, outage_share: float = 0.05,
    outage_minutes: tuple[int, int] = (15, 120),
) -> ScenarioSpec:
    """Mixed population: blocks of frequent addresses and blocks of sparse ones.

    A fraction ``outage_share`` of blocks (drawn from both kinds) gets one outage on
    the detection day with a duration uniform in ``outage_minutes``.
    """
    rng = np.random.default_rng([seed, 0x5eed])
    n_blocks = n_addresses // per_block
    n_frequent = int(round(n_blocks * frequent_share))
    n_outage = max(1, int(round(n_blocks * outage_share)))
    outage_blocks = set(rng.choice(n_blocks, size=n_outage, replace=False).tolist())
    day3 = epoch + 2 * DAY
    blocks = []
    for b in range(n_blocks):
        rate = frequent_rate if b < n_frequent else sparse_rate
        outages = ()
        if b in outage_blocks:
            minutes = int(rng.integers(outage_minutes[0], outage_minutes[1] + 1))
            start = day3 + int(rng.integers(3600, DAY - 3600 - minutes * 60))
            outages = ((start, start + minutes * 60),)
        addrs = tuple(AddressSpec(rate, 300, h + 1) for h in range(per_block))
        blocks.append(BlockSpec(example_block(family, b), addrs, outages))
    return ScenarioSpec(seed, (epoch, epoch + 3 * DAY), tuple(blocks))


PRESETS = {
    "frequent-gap": frequent_gap_scenario,
    "sparse": sparse_scenario,
    "hybrid": hybrid_population,
}
