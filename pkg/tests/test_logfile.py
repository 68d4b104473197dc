"""Round-trip and error-path tests for the session log format."""

from __future__ import annotations

import itertools
import random

import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

_UNIQUE = itertools.count()

from wattflow.counter import CounterSpec, RaplDomain, RawSample
from wattflow.errors import (
    AlreadyActiveError,
    HeaderMismatchError,
    InvalidArgumentError,
    ParseError,
)
from wattflow.logfile import (
    LogStatus,
    LogWriter,
    format_record,
    log_filename,
    parse_log,
    session_from_filename,
)

PKG_SPEC = CounterSpec(domain=RaplDomain.PACKAGE, bit_width=32,
                       energy_unit_joules=1e-6)
DRAM_SPEC = CounterSpec(domain=RaplDomain.DRAM, bit_width=32,
                        energy_unit_joules=6.103515625e-05)


def write_simple_log(tmp_path, records, node="n1", session="s1",
                     specs=None, status=LogStatus.CLOSED, epoch=1_000):
    path = str(tmp_path / log_filename(node, session))
    specs = specs or {RaplDomain.PACKAGE: PKG_SPEC}
    w = LogWriter(path, node, specs, epoch_wall_ns=epoch)
    for t_ns, domain, raw in records:
        w.record(t_ns, domain, raw)
    w.close(status)
    return path


class TestRoundTrip:
    def test_simple_round_trip(self, tmp_path):
        recs = [(10, RaplDomain.PACKAGE, 100), (20, RaplDomain.PACKAGE, 200)]
        parsed = parse_log(write_simple_log(tmp_path, recs))
        assert parsed.node_id == "n1"
        assert parsed.session_id == "s1"
        assert parsed.epoch_wall_ns == 1_000
        assert parsed.status is LogStatus.CLOSED
        series = parsed.series[RaplDomain.PACKAGE]
        assert series.samples == (RawSample(10, 100), RawSample(20, 200))
        assert series.spec == PKG_SPEC

    def test_interleaved_domains(self, tmp_path):
        specs = {RaplDomain.PACKAGE: PKG_SPEC, RaplDomain.DRAM: DRAM_SPEC}
        recs = [(10, RaplDomain.PACKAGE, 1), (11, RaplDomain.DRAM, 2),
                (20, RaplDomain.PACKAGE, 3), (21, RaplDomain.DRAM, 4)]
        parsed = parse_log(write_simple_log(tmp_path, recs, specs=specs))
        assert [s.raw for s in parsed.series[RaplDomain.PACKAGE].samples] \
            == [1, 3]
        assert [s.raw for s in parsed.series[RaplDomain.DRAM].samples] == [2, 4]
        assert parsed.series[RaplDomain.DRAM].spec.energy_unit_joules \
            == 6.103515625e-05

    @given(steps=st.lists(
               st.tuples(st.integers(min_value=1, max_value=10**6),
                         st.integers(min_value=0, max_value=2**32 - 1)),
               min_size=0, max_size=50),
           unit=st.floats(min_value=1e-9, max_value=1.0, allow_nan=False))
    @settings(max_examples=60,
              suppress_health_check=[HealthCheck.function_scoped_fixture])
    def test_any_generated_series_round_trips(self, tmp_path, steps, unit):
        # Raw values and timestamps must come back bit for bit; the unit
        # survives via shortest-repr text.
        name = f"rt{next(_UNIQUE)}"
        path = str(tmp_path / log_filename("nodeA", name))
        spec = CounterSpec(domain=RaplDomain.PACKAGE, bit_width=32,
                           energy_unit_joules=unit)
        w = LogWriter(path, "nodeA", {RaplDomain.PACKAGE: spec},
                      epoch_wall_ns=42)
        t = 0
        expected = []
        for dt, raw in steps:
            t += dt
            w.record(t, RaplDomain.PACKAGE, raw)
            expected.append(RawSample(t, raw))
        w.close()
        series = parse_log(path).series[RaplDomain.PACKAGE]
        assert series.samples == tuple(expected)
        assert series.spec.energy_unit_joules == unit

    def test_node_with_underscore_in_name(self, tmp_path):
        path = write_simple_log(tmp_path, [(1, RaplDomain.PACKAGE, 0)],
                                node="rack_3_node_7", session="wf_42")
        parsed = parse_log(path)
        assert parsed.node_id == "rack_3_node_7"
        assert parsed.session_id == "wf_42"


class TestWriterValidation:
    def test_refuses_existing_file(self, tmp_path):
        path = write_simple_log(tmp_path, [])
        with pytest.raises(AlreadyActiveError):
            LogWriter(path, "n1", {RaplDomain.PACKAGE: PKG_SPEC}, 0)

    def test_refuses_non_monotonic_write(self, tmp_path):
        path = str(tmp_path / log_filename("n1", "x"))
        w = LogWriter(path, "n1", {RaplDomain.PACKAGE: PKG_SPEC}, 0)
        w.record(10, RaplDomain.PACKAGE, 0)
        with pytest.raises(InvalidArgumentError):
            w.record(10, RaplDomain.PACKAGE, 1)
        w.close()

    def test_refuses_unknown_domain(self, tmp_path):
        path = str(tmp_path / log_filename("n1", "y"))
        w = LogWriter(path, "n1", {RaplDomain.PACKAGE: PKG_SPEC}, 0)
        with pytest.raises(InvalidArgumentError):
            w.record(1, RaplDomain.DRAM, 0)
        w.close()

    def test_context_manager_marks_truncated_on_error(self, tmp_path):
        path = str(tmp_path / log_filename("n1", "z"))
        with pytest.raises(RuntimeError):
            with LogWriter(path, "n1", {RaplDomain.PACKAGE: PKG_SPEC}, 0) as w:
                w.record(1, RaplDomain.PACKAGE, 5)
                raise RuntimeError("boom")
        assert parse_log(path).status is LogStatus.TRUNCATED


class TestParserErrors:
    def test_shuffled_lines_rejected(self, tmp_path):
        recs = [(t * 10, RaplDomain.PACKAGE, t) for t in range(1, 9)]
        path = write_simple_log(tmp_path, recs)
        lines = open(path).read().splitlines()
        body = [ln for ln in lines if not ln.startswith("#")]
        head = [ln for ln in lines if ln.startswith("#wattflow-v1")]
        tail = [ln for ln in lines if ln.startswith("#wattflow-end")]
        rng = random.Random(7)
        shuffled = body[:]
        while shuffled == body:
            rng.shuffle(shuffled)
        mangled = tmp_path / log_filename("n1", "s2")
        mangled.write_text("\n".join(head + shuffled + tail) + "\n")
        with pytest.raises(ParseError, match="non-monotonic timestamp"):
            parse_log(str(mangled))

    def test_record_before_header(self, tmp_path):
        p = tmp_path / log_filename("n1", "s3")
        p.write_text("5,package,1\n")
        with pytest.raises(HeaderMismatchError):
            parse_log(str(p))

    def test_missing_header_entirely(self, tmp_path):
        p = tmp_path / log_filename("n1", "s4")
        p.write_text("")
        with pytest.raises(HeaderMismatchError):
            parse_log(str(p))

    def test_malformed_record_carries_line_number(self, tmp_path):
        path = write_simple_log(tmp_path, [(1, RaplDomain.PACKAGE, 0)])
        text = open(path).read().replace("1,package,0", "1;package;0")
        p = tmp_path / log_filename("n1", "s5")
        p.write_text(text)
        with pytest.raises(ParseError, match=r":2:"):
            parse_log(str(p))

    def test_raw_out_of_register_range(self, tmp_path):
        path = write_simple_log(tmp_path, [(1, RaplDomain.PACKAGE, 0)])
        text = open(path).read().replace("1,package,0",
                                         f"1,package,{2**32}")
        p = tmp_path / log_filename("n1", "s6")
        p.write_text(text)
        with pytest.raises(ParseError, match="outside"):
            parse_log(str(p))

    def test_content_after_trailer(self, tmp_path):
        path = write_simple_log(tmp_path, [(1, RaplDomain.PACKAGE, 0)])
        with open(path, "a") as fh:
            fh.write("2,package,1\n")
        with pytest.raises(ParseError, match="after end trailer"):
            parse_log(path)

    def test_header_disagreement(self, tmp_path):
        p = tmp_path / log_filename("n1", "s7")
        p.write_text(
            "#wattflow-v1 node=n1 domain=package bit_width=32 unit_j=1e-06 "
            "epoch_wall_ns=0\n"
            "#wattflow-v1 node=OTHER domain=dram bit_width=32 unit_j=1e-06 "
            "epoch_wall_ns=0\n")
        with pytest.raises(HeaderMismatchError):
            parse_log(str(p))


class TestGapAndStatus:
    def test_gap_marker_sets_unsafe_flag(self, tmp_path):
        path = str(tmp_path / log_filename("n1", "g1"))
        w = LogWriter(path, "n1", {RaplDomain.PACKAGE: PKG_SPEC}, 0)
        w.record(10, RaplDomain.PACKAGE, 0)
        w.gap(15, RaplDomain.PACKAGE)
        w.record(20, RaplDomain.PACKAGE, 5)
        w.close()
        parsed = parse_log(path)
        series = parsed.series[RaplDomain.PACKAGE]
        assert series.gap_markers == (15,)
        assert series.has_unsafe_gap(10, 20)
        assert parsed.flagged

    def test_clean_log_not_flagged(self, tmp_path):
        parsed = parse_log(write_simple_log(
            tmp_path, [(1, RaplDomain.PACKAGE, 0)]))
        assert not parsed.flagged

    def test_reaped_status_round_trips(self, tmp_path):
        parsed = parse_log(write_simple_log(
            tmp_path, [(1, RaplDomain.PACKAGE, 0)], status=LogStatus.REAPED))
        assert parsed.status is LogStatus.REAPED
        assert parsed.flagged

    def test_missing_trailer_reads_as_open(self, tmp_path):
        path = str(tmp_path / log_filename("n1", "g2"))
        w = LogWriter(path, "n1", {RaplDomain.PACKAGE: PKG_SPEC}, 0)
        w.record(10, RaplDomain.PACKAGE, 0)
        w.abandon()
        parsed = parse_log(path)
        assert parsed.status is LogStatus.OPEN
        assert parsed.flagged

    def test_torn_final_line_dropped_and_truncated(self, tmp_path):
        path = write_simple_log(tmp_path, [(1, RaplDomain.PACKAGE, 0),
                                           (2, RaplDomain.PACKAGE, 1)])
        text = open(path).read()
        torn = text.replace("#wattflow-end status=closed\n", "3,packa")
        p = tmp_path / log_filename("n1", "g3")
        p.write_text(torn)
        parsed = parse_log(str(p))
        assert parsed.status is LogStatus.TRUNCATED
        assert len(parsed.series[RaplDomain.PACKAGE].samples) == 2


class TestNaming:
    def test_filename_shape(self):
        assert log_filename("n1", "wf42") == "rapl_n1_wf42.csv"

    def test_session_recovery_requires_node_prefix(self):
        assert session_from_filename("rapl_n1_wf42.csv", "n1") == "wf42"
        with pytest.raises(InvalidArgumentError):
            session_from_filename("rapl_n1_wf42.csv", "n2")
        with pytest.raises(InvalidArgumentError):
            session_from_filename("notalog.txt", "n1")

    def test_format_record_is_plain_decimal(self):
        assert format_record(123, RaplDomain.PACKAGE, 456) == "123,package,456"
