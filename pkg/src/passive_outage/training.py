"""Per-address history models: active probability, class and timebin selection."""

from __future__ import annotations

import csv
import io
import ipaddress
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, FormatError
from .ingest import BlockId, FlowObservation, IPAddress, block_of

DAY = 86400

FREQUENT = "frequent"
SPARSE = "sparse"
UNMEASURABLE = "unmeasurable"
CLASSES = (FREQUENT, SPARSE, UNMEASURABLE)

MODEL_COLUMNS = ("address", "block", "pi_short", "pi_long", "timebin", "class")


@dataclass(frozen=True)
class TrainingConfig:
    d_days: int = 2
    t_short: int = 300
    t_long: int = 1500
    theta_sparse: float = 0.6
    theta_measurable: float = 0.1

    def __post_init__(self) -> None:
        if self.d_days < 1:
            raise ConfigError("d_days must be at least 1")
        if self.t_short <= 0 or self.t_long <= 0:
            raise ConfigError("timebins must be positive")
        if self.t_long % self.t_short:
            raise ConfigError(f"t_short={self.t_short} must divide t_long={self.t_long}")
        if not 0.0 <= self.theta_measurable <= self.theta_sparse <= 1.0:
            raise ConfigError("need 0 <= theta_measurable <= theta_sparse <= 1")

    def training_window(self, detect_start: float) -> tuple[float, float]:
        """The d days before ``detect_start``, trimmed at the old end to whole long bins.

        Both candidate timebins are evaluated over this one window so the grids
        coincide with the detection grid and the long bins tile the short ones.
        """
        n_long = (self.d_days * DAY) // self.t_long
        if n_long == 0:
            raise ConfigError("training window is shorter than one long timebin")
        return detect_start - n_long * self.t_long, detect_start


@dataclass(frozen=True)
class AddressModel:
    address: IPAddress
    block: BlockId
    pi_short: float
    pi_long: float
    timebin: int | None
    cls: str

    @property
    def measurable(self) -> bool:
        return self.cls != UNMEASURABLE

    @property
    def pi(self) -> float:
        """Active probability at the selected timebin."""
        return self.pi_short if self.cls == FREQUENT else self.pi_long


def compute_active_probability(
    timestamps: Sequence[float] | np.ndarray,
    window: tuple[float, float],
    timebin: float,
) -> float:
    """Fraction of ``timebin`` bins in ``window`` (aligned to its start) with traffic."""
    start, end = window
    length = end - start
    if length <= 0:
        raise ValueError("zero-length training window")
    n_bins = length / timebin
    if n_bins != int(n_bins):
        raise ValueError(f"window length {length} is not a multiple of timebin {timebin}")
    ts = np.asarray(timestamps, dtype=float)
    if ts.size == 0:
        return 0.0
    if ts.min() < start or ts.max() >= end:
        raise ValueError("timestamps fall outside the training window")
    occupied = np.unique(((ts - start) // timebin).astype(np.int64))
    return occupied.size / int(n_bins)


def classify_address(pi_short: float, pi_long: float, cfg: TrainingConfig) -> tuple[str, int | None]:
    if pi_short >= cfg.theta_sparse:
        return FREQUENT, cfg.t_short
    if pi_long >= cfg.theta_measurable:
        return SPARSE, cfg.t_long
    return UNMEASURABLE, None


def group_by_address(observations: Iterable[FlowObservation]) -> dict[IPAddress, list[float]]:
    by_addr: dict[IPAddress, list[float]] = defaultdict(list)
    for obs in observations:
        by_addr[obs.src].append(obs.timestamp)
    return by_addr


def train_models(
    observations: Iterable[FlowObservation],
    detect_start: float,
    cfg: TrainingConfig,
) -> dict[BlockId, list[AddressModel]]:
    """Build one model per address seen in the training window preceding ``detect_start``.

    Unmeasurable addresses are kept (with ``measurable`` false).  Blocks and their
    member lists come out sorted so the result is independent of input order.
    """
    window = cfg.training_window(detect_start)
    in_window = (o for o in observations if window[0] <= o.timestamp < window[1])
    models: dict[BlockId, list[AddressModel]] = defaultdict(list)
    for addr, stamps in group_by_address(in_window).items():
        pi_short = compute_active_probability(stamps, window, cfg.t_short)
        pi_long = compute_active_probability(stamps, window, cfg.t_long)
        cls, timebin = classify_address(pi_short, pi_long, cfg)
        blk = block_of(addr)
        models[blk].append(AddressModel(addr, blk, pi_short, pi_long, timebin, cls))
    return {
        blk: sorted(members, key=lambda m: int(m.address))
        for blk, members in sorted(models.items())
    }


def write_model_cache(
    models: Mapping[BlockId, Sequence[AddressModel]],
    fh,
    header: Sequence[str] = (),
) -> None:
    """Write models as CSV; ``header`` lines are emitted as ``#`` comments first."""
    for line in header:
        fh.write(f"# {line}\n")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(MODEL_COLUMNS)
    for blk in sorted(models):
        for m in models[blk]:
            writer.writerow([
                str(m.address), str(blk), repr(m.pi_short), repr(m.pi_long),
                "" if m.timebin is None else m.timebin, m.cls,
            ])


def read_model_cache(fh) -> tuple[dict[BlockId, list[AddressModel]], dict[str, str]]:
    """Inverse of ``write_model_cache``; returns models plus ``key=value`` comment metadata."""
    meta: dict[str, str] = {}
    body = []
    for line in fh:
        if line.startswith("#"):
            key, sep, value = line[1:].strip().partition("=")
            if sep:
                meta[key.strip()] = value.strip()
            continue
        body.append(line)
    models: dict[BlockId, list[AddressModel]] = defaultdict(list)
    reader = csv.DictReader(io.StringIO("".join(body)))
    if reader.fieldnames is None or tuple(reader.fieldnames) != MODEL_COLUMNS:
        raise FormatError(f"model cache header must be {','.join(MODEL_COLUMNS)}")
    for row in reader:
        try:
            addr = ipaddress.ip_address(row["address"])
            blk = BlockId.parse(row["block"])
            cls = row["class"]
            if cls not in CLASSES or block_of(addr) != blk:
                raise ValueError(row)
            timebin = int(row["timebin"]) if row["timebin"] else None
            models[blk].append(AddressModel(
                addr, blk, float(row["pi_short"]), float(row["pi_long"]), timebin, cls,
            ))
        except (ValueError, KeyError) as exc:
            raise FormatError(f"bad model cache row: {exc}") from exc
    return dict(models), meta
