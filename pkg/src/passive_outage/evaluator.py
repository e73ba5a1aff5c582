"""Comparison of detected block timelines against ground truth.

Three views are produced: a direct block-seconds confusion matrix, a
precision-aware one that forgives disagreements shorter than the block timebin,
and an event-count matrix.  Uncertain detector time is left out of every cell.
"""

from __future__ import annotations

import csv
import io
from collections import defaultdict
from dataclasses import dataclass, field
from decimal import ROUND_DOWN, Decimal
from typing import Iterable, Mapping, NamedTuple, Sequence

from .aggregator import BlockReport, OutageEvent
from .detector import DOWN, UNCERTAIN, UP
from .errors import FormatError, StructuralError
from .ingest import BlockId

TRUTH_COLUMNS = ("block", "start", "end", "state")


@dataclass
class GroundTruthTimeline:
    block: BlockId
    intervals: list[tuple[float, float, str]]

    def __post_init__(self) -> None:
        prev_end = None
        for start, end, state in self.intervals:
            if state not in (UP, DOWN):
                raise ValueError(f"ground truth state must be up or down, got {state!r}")
            if end <= start:
                raise ValueError(f"empty ground-truth interval [{start},{end})")
            if prev_end is not None and start != prev_end:
                raise ValueError("ground-truth intervals must be sorted and contiguous")
            prev_end = end

    @classmethod
    def from_outages(
        cls, block: BlockId, window: tuple[float, float], outages: Iterable[tuple[float, float]],
    ) -> "GroundTruthTimeline":
        intervals = []
        cursor = window[0]
        for start, end in sorted(outages):
            if start > cursor:
                intervals.append((cursor, start, UP))
            intervals.append((start, end, DOWN))
            cursor = end
        if cursor < window[1]:
            intervals.append((cursor, window[1], UP))
        return cls(block, intervals)

    def covers(self, window: tuple[float, float]) -> bool:
        return bool(self.intervals) and self.intervals[0][0] <= window[0] and self.intervals[-1][1] >= window[1]

    def down_events(self, window: tuple[float, float] | None = None) -> list[tuple[float, float]]:
        """Merged down intervals, clipped to ``window`` when given."""
        events: list[tuple[float, float]] = []
        for start, end, state in self.intervals:
            if window is not None:
                start, end = max(start, window[0]), min(end, window[1])
            if state != DOWN or end <= start:
                continue
            if events and events[-1][1] == start:
                events[-1] = (events[-1][0], end)
            else:
                events.append((start, end))
        return events


@dataclass
class ConfusionMatrix:
    ta: float = 0
    to: float = 0
    fa: float = 0
    fo: float = 0
    unit: str = "seconds"

    def __post_init__(self) -> None:
        if min(self.ta, self.to, self.fa, self.fo) < 0:
            raise ValueError("confusion cells must be non-negative")

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if self.unit != other.unit:
            raise ValueError(f"cannot add {self.unit} to {other.unit}")
        return ConfusionMatrix(
            self.ta + other.ta, self.to + other.to, self.fa + other.fa, self.fo + other.fo, self.unit,
        )

    @property
    def total(self) -> float:
        return self.ta + self.to + self.fa + self.fo

    def cells(self) -> tuple[float, float, float, float]:
        return self.ta, self.to, self.fa, self.fo


class Metrics(NamedTuple):
    ppv: float | None
    recall: float | None
    tnr: float | None

    def formatted(self) -> tuple[str, str, str]:
        return tuple(format_metric(v) for v in self)


def _ratio(num: float, den: float) -> float | None:
    return num / den if den > 0 else None


def metrics(cm: ConfusionMatrix) -> Metrics:
    """PPV ta/(ta+fa), recall ta/(ta+fo), TNR to/(to+fa); None where undefined."""
    return Metrics(
        _ratio(cm.ta, cm.ta + cm.fa),
        _ratio(cm.ta, cm.ta + cm.fo),
        _ratio(cm.to, cm.to + cm.fa),
    )


def format_metric(value: float | None, places: int = 4) -> str:
    """Render a metric truncated (not rounded) to ``places`` decimals; undefined -> 'undefined'."""
    if value is None:
        return "undefined"
    return str(Decimal(repr(value)).quantize(Decimal(1).scaleb(-places), rounding=ROUND_DOWN))


class _Piece(NamedTuple):
    start: float
    end: float
    detected: str
    truth: str


def _pieces(report: BlockReport, truth: GroundTruthTimeline, window: tuple[float, float]) -> list[_Piece]:
    if truth.block != report.block:
        raise StructuralError(f"comparing {report.block} against truth for {truth.block}")
    if not report.measurable or not report.timeline:
        raise StructuralError(f"{report.block} has no detection timeline")
    segs = report.status_segments()
    if segs[0][0] > window[0] or segs[-1][1] < window[1]:
        raise StructuralError(f"detection timeline for {report.block} does not cover the window")
    if not truth.covers(window):
        raise StructuralError(f"ground truth for {truth.block} does not cover the window")
    bounds = {window[0], window[1]}
    bounds.update(s for s, _, _ in segs)
    bounds.update(e for _, e, _ in segs)
    bounds.update(s for s, _, _ in truth.intervals)
    bounds.update(e for _, e, _ in truth.intervals)
    cuts = sorted(b for b in bounds if window[0] <= b <= window[1])
    out = []
    i = j = 0
    for lo, hi in zip(cuts, cuts[1:]):
        while segs[i][1] <= lo:
            i += 1
        while truth.intervals[j][1] <= lo:
            j += 1
        out.append(_Piece(lo, hi, segs[i][2], truth.intervals[j][2]))
    return out


def _cell(detected: str, truth: str) -> str:
    if detected == UP:
        return "ta" if truth == UP else "fa"
    return "fo" if truth == UP else "to"


def _tally(pieces: Iterable[tuple[float, str]]) -> ConfusionMatrix:
    cells = defaultdict(float)
    for length, cell in pieces:
        cells[cell] += length
    return ConfusionMatrix(cells["ta"], cells["to"], cells["fa"], cells["fo"], "seconds")


def compare_durations(
    report: BlockReport, truth: GroundTruthTimeline, window: tuple[float, float],
) -> ConfusionMatrix:
    return _tally(
        (p.end - p.start, _cell(p.detected, p.truth))
        for p in _pieces(report, truth, window)
        if p.detected != UNCERTAIN
    )


def precision_aware_compare(
    report: BlockReport, truth: GroundTruthTimeline, window: tuple[float, float],
) -> ConfusionMatrix:
    """Like ``compare_durations`` but disagreement runs shorter than T(b) count as agreement.

    A disagreement run is a maximal contiguous stretch where the detector states
    a binary status that differs from truth; uncertain time breaks runs.
    """
    timebin = report.timebin
    pieces = [p for p in _pieces(report, truth, window) if p.detected != UNCERTAIN]
    tallied: list[tuple[float, str]] = []
    run: list[_Piece] = []

    def flush() -> None:
        forgive = run and run[-1].end - run[0].start < timebin
        for p in run:
            cell = _cell(p.truth, p.truth) if forgive else _cell(p.detected, p.truth)
            tallied.append((p.end - p.start, cell))
        run.clear()

    for p in pieces:
        if p.detected == p.truth:
            flush()
            tallied.append((p.end - p.start, _cell(p.detected, p.truth)))
        else:
            if run and run[-1].end != p.start:
                flush()
            run.append(p)
    flush()
    return _tally(tallied)


def _overlaps(a: tuple[float, float], b: tuple[float, float], slack: float) -> bool:
    return a[0] <= b[1] + slack and b[0] <= a[1] + slack


def compare_events(
    detected: Sequence[OutageEvent] | Sequence[tuple[float, float]],
    truth: Sequence[tuple[float, float]],
    window: tuple[float, float],
    timebin: float,
) -> ConfusionMatrix:
    """Event-count matrix for one block.

    Detected down events match truth down events that overlap within one timebin,
    one-to-one and greedily by start time.  A block with no down events on either
    side counts as a single true-availability event.
    """
    det = sorted(
        (e.start, e.end) if isinstance(e, OutageEvent) else tuple(e)
        for e in detected
        if not isinstance(e, OutageEvent) or e.kind == DOWN
    )
    tru = sorted(tuple(e) for e in truth)
    for s, e in det + tru:
        if s < window[0] or e > window[1]:
            raise StructuralError(f"event [{s},{e}) outside window {window}")
    if not det and not tru:
        return ConfusionMatrix(1, 0, 0, 0, "events")
    used = [False] * len(tru)
    matched = 0
    for d in det:
        for k, t in enumerate(tru):
            if not used[k] and _overlaps(d, t, timebin):
                used[k] = True
                matched += 1
                break
    return ConfusionMatrix(0, matched, len(tru) - matched, len(det) - matched, "events")


def read_truth(fh) -> dict[BlockId, GroundTruthTimeline]:
    rows: dict[BlockId, list[tuple[float, float, str]]] = defaultdict(list)
    body = io.StringIO("".join(l for l in fh if not l.startswith("#")))
    try:
        for row in csv.DictReader(body):
            rows[BlockId.parse(row["block"])].append(
                (float(row["start"]), float(row["end"]), row["state"].strip())
            )
        return {blk: GroundTruthTimeline(blk, sorted(iv)) for blk, iv in sorted(rows.items())}
    except (KeyError, ValueError, TypeError) as exc:
        raise FormatError(f"bad ground-truth file: {exc}") from exc


def write_truth(truths: Mapping[BlockId, GroundTruthTimeline], fh, header: Sequence[str] = ()) -> None:
    for line in header:
        fh.write(f"# {line}\n")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(TRUTH_COLUMNS)
    for blk in sorted(truths):
        for start, end, state in truths[blk].intervals:
            writer.writerow([str(blk), format_number(start), format_number(end), state])


def format_number(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


@dataclass
class BlockEvaluation:
    block: BlockId
    direct: ConfusionMatrix
    precision_aware: ConfusionMatrix
    events: ConfusionMatrix


@dataclass
class EvaluationReport:
    window: tuple[float, float]
    blocks: list[BlockEvaluation] = field(default_factory=list)
    total_blocks: int = 0
    measurable_blocks: int = 0

    def _sum(self, attr: str, unit: str) -> ConfusionMatrix:
        total = ConfusionMatrix(unit=unit)
        for b in self.blocks:
            total = total + getattr(b, attr)
        return total

    @property
    def direct(self) -> ConfusionMatrix:
        return self._sum("direct", "seconds")

    @property
    def precision_aware(self) -> ConfusionMatrix:
        return self._sum("precision_aware", "seconds")

    @property
    def events(self) -> ConfusionMatrix:
        return self._sum("events", "events")

    @property
    def coverage(self) -> float | None:
        return _ratio(self.measurable_blocks, self.total_blocks)

    def summary_rows(self) -> list[list[str]]:
        rows = []
        for name in ("direct", "precision_aware", "events"):
            cm = getattr(self, name)
            rows.append([name, cm.unit, *(format_number(c) for c in cm.cells()), *metrics(cm).formatted()])
        return rows

    def write_csv(self, fh, header: Sequence[str] = ()) -> None:
        for line in header:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["scope", "comparison", "unit", "ta", "to", "fa", "fo", "ppv", "recall", "tnr"])
        for row in self.summary_rows():
            writer.writerow(["aggregate", *row])
        for b in self.blocks:
            for name in ("direct", "precision_aware", "events"):
                cm = getattr(b, name)
                writer.writerow([str(b.block), name, cm.unit, *(format_number(c) for c in cm.cells()),
                                 *metrics(cm).formatted()])

    def summary_text(self) -> str:
        lines = [
            f"blocks: {self.total_blocks} total, {self.measurable_blocks} measurable, "
            f"{len(self.blocks)} compared (coverage {format_metric(self.coverage)})",
        ]
        for name, unit, ta, to, fa, fo, ppv, rec, tnr in self.summary_rows():
            lines.append(
                f"{name:>16} [{unit}] ta={ta} to={to} fa={fa} fo={fo}  PPV={ppv} recall={rec} TNR={tnr}"
            )
        return "\n".join(lines)


def evaluate_reports(
    reports: Mapping[BlockId, BlockReport],
    truths: Mapping[BlockId, GroundTruthTimeline],
    window: tuple[float, float],
) -> EvaluationReport:
    """Compare every measurable block that has ground truth.

    Coverage counts blocks known to either side; blocks missing a report or with
    an unmeasurable one are uncovered.
    """
    universe = set(reports) | set(truths)
    out = EvaluationReport(window, total_blocks=len(universe))
    for blk in sorted(universe):
        rep = reports.get(blk)
        if rep is None or not rep.measurable:
            continue
        out.measurable_blocks += 1
        truth = truths.get(blk)
        if truth is None:
            continue
        out.blocks.append(BlockEvaluation(
            blk,
            compare_durations(rep, truth, window),
            precision_aware_compare(rep, truth, window),
            compare_events(rep.events, truth.down_events(window), window, rep.timebin),
        ))
    return out
