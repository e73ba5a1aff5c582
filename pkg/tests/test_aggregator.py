import io
import ipaddress
import math

import pytest
from hypothesis import given, strategies as st

from passive_outage.aggregator import (
    BlockBin,
    OutageEvent,
    block_belief,
    build_block_report,
    extract_events,
    merge_to_block_timeline,
    read_reports,
    write_blocks,
    write_events,
)
from passive_outage.detector import (
    DOWN,
    UNCERTAIN,
    UP,
    AddressBin,
    BeliefState,
    DetectorConfig,
    bin_edges,
    detect_address_timeline,
)
from passive_outage.errors import FormatError, StructuralError
from passive_outage.ingest import BlockId, block_of
from passive_outage.training import FREQUENT, SPARSE, AddressModel

T0 = 1547078400
CFG = DetectorConfig()
BLOCK = BlockId.parse("192.0.2.0/24")


def timeline(beliefs, timebin, start=T0, end=None):
    end = start + len(beliefs) * timebin if end is None else end
    edges = bin_edges((start, end), timebin)
    return [AddressBin(lo, hi, False, BeliefState.from_belief(b, CFG)) for (lo, hi), b in zip(edges, beliefs)]


def bins(statuses, timebin=300, start=T0):
    return [BlockBin(start + i * timebin, start + (i + 1) * timebin, float("nan"), s)
            for i, s in enumerate(statuses)]


def member(host, pi, timebin):
    a = ipaddress.ip_address(f"192.0.2.{host}")
    cls = FREQUENT if timebin == 300 else SPARSE
    return AddressModel(a, block_of(a), pi if cls == FREQUENT else 0.2, pi, timebin, cls)


class TestMerge:
    def test_coarse_belief_held_over_fine_bins(self):
        window = (T0, T0 + 3000)
        fine = timeline([0.1] * 10, 300)
        coarse = timeline([0.7, 0.2], 1500)
        merged = merge_to_block_timeline([(300, fine), (1500, coarse)], window, 300, 0.6, 0.95)
        assert len(merged) == 10
        assert [b.belief for b in merged] == [0.7] * 5 + [0.2] * 5
        assert [b.status for b in merged] == [UNCERTAIN] * 5 + [DOWN] * 5

    def test_frequent_down_but_sparse_uncertain(self):
        # the frequent member goes down for 3 bins while the sparse member sits at 0.7
        window = (T0, T0 + 1500)
        fine = timeline([0.95, 0.1, 0.1, 0.1, 0.95], 300)
        coarse = timeline([0.7], 1500)
        merged = merge_to_block_timeline([(300, fine), (1500, coarse)], window, 300, 0.6, 0.95)
        assert [b.status for b in merged] == [UP, UNCERTAIN, UNCERTAIN, UNCERTAIN, UP]

    def test_truncated_last_bin(self):
        window = (T0, T0 + 86400)
        fine = timeline([0.95] * 288, 300)
        coarse = timeline([0.2] * 58, 1500, end=T0 + 86400)
        merged = merge_to_block_timeline([(300, fine), (1500, coarse)], window, 300, 0.6, 0.95)
        assert merged[-1].end == T0 + 86400 and len(merged) == 288

    def test_off_grid_timeline_rejected(self):
        with pytest.raises(StructuralError):
            merge_to_block_timeline([(300, timeline([0.9] * 3, 300, start=T0 + 1))], (T0, T0 + 900), 300, 0.6, 0.95)

    def test_wrong_length_rejected(self):
        with pytest.raises(StructuralError):
            merge_to_block_timeline([(300, timeline([0.9] * 2, 300))], (T0, T0 + 900), 300, 0.6, 0.95)

    def test_non_dividing_timebin_rejected(self):
        with pytest.raises(StructuralError):
            merge_to_block_timeline([(1000, timeline([0.9] * 3, 1000))], (T0, T0 + 3000), 300, 0.6, 0.95)

    def test_no_members(self):
        with pytest.raises(ValueError):
            block_belief([])

    @given(st.lists(st.lists(st.floats(0.1, 0.95), min_size=10, max_size=10), min_size=1, max_size=5))
    def test_block_belief_is_member_maximum(self, member_beliefs):
        window = (T0, T0 + 3000)
        tls = [(300, timeline(bs, 300)) for bs in member_beliefs]
        merged = merge_to_block_timeline(tls, window, 300, 0.6, 0.95)
        for i, b in enumerate(merged):
            assert b.belief == max(bs[i] for bs in member_beliefs)
        # order of members does not matter
        assert merge_to_block_timeline(tls[::-1], window, 300, 0.6, 0.95) == merged


class TestEvents:
    def test_single_down_run(self):
        (ev,) = extract_events(bins([UP, UP, DOWN, DOWN, UP]), BLOCK)
        assert (ev.start - T0, ev.end - T0, ev.kind) == (600, 1200, DOWN)
        assert ev.duration == 600

    def test_uncertain_runs_reported_separately(self):
        evs = extract_events(bins([UNCERTAIN, UNCERTAIN, DOWN, DOWN, UP]), BLOCK)
        assert [(e.start - T0, e.end - T0, e.kind) for e in evs] == [(0, 600, UNCERTAIN), (600, 1200, DOWN)]

    def test_two_separate_outages(self):
        evs = extract_events(bins([DOWN, UP, DOWN]), BLOCK)
        assert [(e.start - T0, e.end - T0) for e in evs] == [(0, 300), (600, 900)]

    def test_all_up(self):
        assert extract_events(bins([UP] * 5), BLOCK) == []

    @given(st.lists(st.sampled_from([UP, DOWN, UNCERTAIN]), max_size=50))
    def test_events_account_for_every_non_up_bin(self, statuses):
        tl = bins(statuses)
        evs = extract_events(tl, BLOCK)
        assert sum(e.duration for e in evs if e.kind == DOWN) == 300 * statuses.count(DOWN)
        assert sum(e.duration for e in evs if e.kind == UNCERTAIN) == 300 * statuses.count(UNCERTAIN)
        for a, b in zip(evs, evs[1:]):
            assert a.end <= b.start
            assert a.end < b.start or a.kind != b.kind


class TestBlockReport:
    window = (T0, T0 + 86400)

    def test_hybrid_block(self):
        freq, sparse = member(1, 0.9, 300), member(2, 0.5, 1500)
        ts = [T0 + i * 300 + 5 for i in range(288) if not 100 <= i < 120]
        members = [
            (freq, detect_address_timeline(ts, freq, self.window, CFG)),
            (sparse, detect_address_timeline([], sparse, self.window, CFG)),
        ]
        rep = build_block_report(BLOCK, members, self.window, CFG)
        assert rep.measurable and rep.timebin == 300 and rep.theta_b == CFG.theta_a
        assert len(rep.timeline) == 288
        down = [e for e in rep.events if e.kind == DOWN]
        assert down and down[0].start == T0 + 101 * 300 and down[0].end == T0 + 120 * 300
        assert rep.down_seconds() == sum(e.duration for e in down)

    def test_unmeasurable_block(self):
        rep = build_block_report(BLOCK, [], self.window, CFG)
        assert not rep.measurable and rep.timebin is None and rep.events == []

    def test_foreign_member_rejected(self):
        other = AddressModel(ipaddress.ip_address("198.51.100.1"), block_of("198.51.100.1"), 0.9, 1, 300, FREQUENT)
        tl = detect_address_timeline([], other, self.window, CFG)
        with pytest.raises(StructuralError):
            build_block_report(BLOCK, [(other, tl)], self.window, CFG)

    def test_status_segments_cover_window(self):
        freq = member(1, 0.9, 300)
        tl = detect_address_timeline([T0 + 5, T0 + 50000], freq, self.window, CFG)
        rep = build_block_report(BLOCK, [(freq, tl)], self.window, CFG)
        segs = rep.status_segments()
        assert segs[0][0] == T0 and segs[-1][1] == T0 + 86400
        assert all(a[1] == b[0] and a[2] != b[2] for a, b in zip(segs, segs[1:]))

    def test_write_read_roundtrip(self):
        freq, sparse = member(1, 0.9, 300), member(2, 0.5, 1500)
        ts = [T0 + i * 300 + 5 for i in range(288) if not 40 <= i < 70]
        rep = build_block_report(BLOCK, [
            (freq, detect_address_timeline(ts, freq, self.window, CFG)),
            (sparse, detect_address_timeline([T0 + 10], sparse, self.window, CFG)),
        ], self.window, CFG)
        empty = build_block_report(block_of("198.51.100.1"), [], self.window, CFG)
        blocks_fh, events_fh = io.StringIO(), io.StringIO()
        write_blocks([rep, empty], blocks_fh, ["x=1"])
        write_events([rep, empty], events_fh, ["x=1"])
        blocks_fh.seek(0)
        events_fh.seek(0)
        loaded = read_reports(blocks_fh, events_fh)
        back = loaded[BLOCK]
        assert back.events == rep.events
        assert [(b.start, b.end, b.status) for b in back.timeline] == [(b.start, b.end, b.status) for b in rep.timeline]
        assert all(math.isnan(b.belief) for b in back.timeline)
        assert not loaded[empty.block].measurable

    def test_read_bad_kind(self):
        blocks = io.StringIO("block,timebin,measurable,theta_b,start,end\n192.0.2.0/24,300,1,0.6,0,600\n")
        events = io.StringIO("block,start,end,kind\n192.0.2.0/24,0,300,sideways\n")
        with pytest.raises(FormatError):
            read_reports(blocks, events)


def test_event_is_value_object():
    assert OutageEvent(BLOCK, 0, 300, DOWN) == OutageEvent(BLOCK, 0, 300, DOWN)
