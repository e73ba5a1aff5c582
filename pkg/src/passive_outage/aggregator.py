"""Block-level merging of address timelines and outage event extraction."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

from .detector import DOWN, UNCERTAIN, UP, AddressBin, DetectorConfig, bin_edges, status_of
from .errors import FormatError, StructuralError
from .ingest import BlockId
from .training import AddressModel

EVENT_COLUMNS = ("block", "start", "end", "kind")
BLOCK_COLUMNS = ("block", "timebin", "measurable", "theta_b", "start", "end")
TIMELINE_COLUMNS = ("block", "bin_start", "belief", "status")


class BlockBin(NamedTuple):
    start: float
    end: float
    belief: float
    status: str


@dataclass(frozen=True)
class OutageEvent:
    block: BlockId
    start: float
    end: float
    kind: str

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass
class BlockReport:
    block: BlockId
    timebin: int | None
    measurable: bool
    theta_b: float
    window: tuple[float, float]
    timeline: list[BlockBin] = field(default_factory=list)
    events: list[OutageEvent] = field(default_factory=list)

    def status_segments(self) -> list[tuple[float, float, str]]:
        """Merged (start, end, status) runs covering the window."""
        segs: list[tuple[float, float, str]] = []
        for b in self.timeline:
            if segs and segs[-1][2] == b.status and segs[-1][1] == b.start:
                segs[-1] = (segs[-1][0], b.end, b.status)
            else:
                segs.append((b.start, b.end, b.status))
        return segs

    def down_seconds(self) -> float:
        return sum(b.end - b.start for b in self.timeline if b.status == DOWN)


def block_belief(member_beliefs: Iterable[float]) -> float:
    beliefs = list(member_beliefs)
    if not beliefs:
        raise ValueError("block has no measurable members")
    return max(beliefs)


def _check_tiling(timeline: Sequence[AddressBin], window: tuple[float, float], timebin: int) -> None:
    expected = bin_edges(window, timebin)
    if len(timeline) != len(expected):
        raise StructuralError(f"timeline has {len(timeline)} bins, expected {len(expected)}")
    for b, (lo, hi) in zip(timeline, expected):
        if b.start != lo or b.end != hi:
            raise StructuralError(f"timeline bin [{b.start},{b.end}) off grid (expected [{lo},{hi}))")


def merge_to_block_timeline(
    address_timelines: Sequence[tuple[int, Sequence[AddressBin]]],
    window: tuple[float, float],
    block_timebin: int,
    theta_b: float,
    b_max: float,
) -> list[BlockBin]:
    """Combine member timelines on the block grid by taking the maximum belief.

    ``address_timelines`` pairs each member's timebin with its timeline.  A member
    with a coarser timebin contributes the belief of its enclosing bin to every
    block bin inside it.
    """
    if not address_timelines:
        raise ValueError("block has no measurable members")
    for timebin, timeline in address_timelines:
        if timebin % block_timebin:
            raise StructuralError(f"block timebin {block_timebin} does not divide {timebin}")
        _check_tiling(timeline, window, timebin)
    start = window[0]
    merged = []
    for lo, hi in bin_edges(window, block_timebin):
        belief = block_belief(
            timeline[int((lo - start) // timebin)].state.belief
            for timebin, timeline in address_timelines
        )
        merged.append(BlockBin(lo, hi, belief, status_of(belief, theta_b, b_max)))
    return merged


def extract_events(timeline: Sequence[BlockBin], block: BlockId) -> list[OutageEvent]:
    """Maximal runs of down or uncertain bins; up runs produce nothing."""
    events: list[OutageEvent] = []
    run_start = run_end = None
    run_kind = None
    for b in list(timeline) + [None]:
        kind = None if b is None or b.status == UP else b.status
        if run_kind is not None and (kind != run_kind or b.start != run_end):
            events.append(OutageEvent(block, run_start, run_end, run_kind))
            run_kind = None
        if kind is not None:
            if run_kind is None:
                run_start, run_kind = b.start, kind
            run_end = b.end
    return events


def build_block_report(
    block: BlockId,
    members: Sequence[tuple[AddressModel, Sequence[AddressBin]]],
    window: tuple[float, float],
    cfg: DetectorConfig,
) -> BlockReport:
    """Block report from measurable members' timelines; no members means unmeasurable."""
    theta_b = cfg.theta_a
    if not members:
        return BlockReport(block, None, False, theta_b, window)
    for model, _ in members:
        if model.block != block:
            raise StructuralError(f"{model.address} does not belong to {block}")
    block_timebin = min(model.timebin for model, _ in members)
    timeline = merge_to_block_timeline(
        [(model.timebin, tl) for model, tl in members], window, block_timebin, theta_b, cfg.b_max,
    )
    return BlockReport(
        block, block_timebin, True, theta_b, window, timeline, extract_events(timeline, block),
    )


def _fmt(x: float) -> str:
    return repr(float(x)) if x != int(x) else str(int(x))


def write_events(reports: Iterable[BlockReport], fh, header: Sequence[str] = ()) -> None:
    for line in header:
        fh.write(f"# {line}\n")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(EVENT_COLUMNS)
    for rep in reports:
        for ev in rep.events:
            writer.writerow([str(ev.block), _fmt(ev.start), _fmt(ev.end), ev.kind])


def write_blocks(reports: Iterable[BlockReport], fh, header: Sequence[str] = ()) -> None:
    for line in header:
        fh.write(f"# {line}\n")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(BLOCK_COLUMNS)
    for rep in reports:
        writer.writerow([
            str(rep.block), "" if rep.timebin is None else rep.timebin,
            int(rep.measurable), rep.theta_b, _fmt(rep.window[0]), _fmt(rep.window[1]),
        ])


def write_timelines(reports: Iterable[BlockReport], fh, header: Sequence[str] = ()) -> None:
    for line in header:
        fh.write(f"# {line}\n")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(TIMELINE_COLUMNS)
    for rep in reports:
        for b in rep.timeline:
            writer.writerow([str(rep.block), _fmt(b.start), repr(b.belief), b.status])


def _csv_body(fh) -> csv.DictReader:
    return csv.DictReader(io.StringIO("".join(l for l in fh if not l.startswith("#"))))


def read_reports(blocks_fh, events_fh) -> dict[BlockId, BlockReport]:
    """Rebuild status-level block reports from the blocks and events files.

    Beliefs are not stored there, so reconstructed bins carry NaN beliefs; any
    bin not covered by an event is up.
    """
    reports: dict[BlockId, BlockReport] = {}
    try:
        for row in _csv_body(blocks_fh):
            blk = BlockId.parse(row["block"])
            timebin = int(row["timebin"]) if row["timebin"] else None
            window = (float(row["start"]), float(row["end"]))
            reports[blk] = BlockReport(
                blk, timebin, row["measurable"] == "1", float(row["theta_b"]), window,
            )
        for row in _csv_body(events_fh):
            blk = BlockId.parse(row["block"])
            if row["kind"] not in (DOWN, UNCERTAIN):
                raise ValueError(f"unknown event kind {row['kind']!r}")
            reports[blk].events.append(
                OutageEvent(blk, float(row["start"]), float(row["end"]), row["kind"])
            )
    except (KeyError, ValueError, TypeError) as exc:
        raise FormatError(f"bad detection output: {exc}") from exc
    for rep in reports.values():
        if not rep.measurable:
            continue
        edges = bin_edges(rep.window, rep.timebin)
        status = [UP] * len(edges)
        for ev in rep.events:
            first = round((ev.start - rep.window[0]) / rep.timebin)
            last = round((ev.end - rep.window[0]) / rep.timebin + 0.4999)
            status[first:last] = [ev.kind] * len(status[first:last])
        rep.timeline = [
            BlockBin(lo, hi, float("nan"), s) for (lo, hi), s in zip(edges, status)
        ]
    return reports
