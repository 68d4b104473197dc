"""Text log format for counter samples.

One log file per node and session, shared-storage friendly: plain lines,
appended by a single writer, readable at any time by any number of readers.
A file starts with one header line per recorded domain, followed by sample
records interleaved across domains, and normally ends with a trailer giving
the close status.

Line grammar::

    #wattflow-v1 node=<id> domain=<name> bit_width=<n> unit_j=<real> epoch_wall_ns=<int>
    <t_ns>,<domain>,<raw>
    #wattflow-gap t_ns=<int> domain=<name>
    #wattflow-end status=<closed|truncated|reaped>
"""

from __future__ import annotations

import logging
import os
import re
from dataclasses import dataclass
from enum import Enum
from typing import IO, Mapping

from .counter import CounterSpec, RaplDomain, RawSample, SampleSeries
from .errors import (
    AlreadyActiveError,
    HeaderMismatchError,
    InvalidArgumentError,
    ParseError,
)

log = logging.getLogger(__name__)

HEADER_PREFIX = "#wattflow-v1 "
GAP_PREFIX = "#wattflow-gap "
END_PREFIX = "#wattflow-end "

_FILENAME_RE = re.compile(r"^rapl_(?P<rest>.+)\.csv$")


class LogStatus(Enum):
    """How a session log ended.

    OPEN means no trailer was found: the writer is still running or died
    without closing.
    """

    CLOSED = "closed"
    TRUNCATED = "truncated"
    REAPED = "reaped"
    OPEN = "open"


def log_filename(node_id: str, session_id: str) -> str:
    return f"rapl_{node_id}_{session_id}.csv"


def session_from_filename(filename: str, node_id: str) -> str:
    """Recover the session id from a log file name, given the node id.

    Node ids may contain underscores, so the split needs the node id (which
    the file header provides).
    """
    m = _FILENAME_RE.match(os.path.basename(filename))
    if not m:
        raise InvalidArgumentError(f"not a session log name: {filename!r}")
    rest = m.group("rest")
    prefix = node_id + "_"
    if not rest.startswith(prefix):
        raise InvalidArgumentError(
            f"log name {filename!r} does not embed node {node_id!r}")
    return rest[len(prefix):]


def format_header(node_id: str, spec: CounterSpec, epoch_wall_ns: int) -> str:
    return (f"{HEADER_PREFIX}node={node_id} domain={spec.domain} "
            f"bit_width={spec.bit_width} unit_j={spec.energy_unit_joules!r} "
            f"epoch_wall_ns={epoch_wall_ns}")


def format_record(t_ns: int, domain: RaplDomain, raw: int) -> str:
    return f"{t_ns},{domain},{raw}"


class LogWriter:
    """Single-writer appender for one session log.

    Creates the file exclusively, writes all domain headers up front, then
    appends records with a flush per line so concurrent readers on shared
    storage never see torn lines held in a userspace buffer.
    """

    def __init__(self, path: str, node_id: str,
                 specs: Mapping[RaplDomain, CounterSpec],
                 epoch_wall_ns: int) -> None:
        if not specs:
            raise InvalidArgumentError("at least one domain spec required")
        self.path = path
        self.node_id = node_id
        self.specs = dict(specs)
        self.epoch_wall_ns = epoch_wall_ns
        self._last_t: dict[RaplDomain, int] = {}
        self._closed = False
        try:
            self._fh: IO[str] = open(path, "x", encoding="ascii")
        except FileExistsError:
            raise AlreadyActiveError(
                f"session log {path} already exists") from None
        for spec in self.specs.values():
            self._fh.write(format_header(node_id, spec, epoch_wall_ns) + "\n")
        self._fh.flush()

    def record(self, t_ns: int, domain: RaplDomain, raw: int) -> None:
        spec = self._spec_for(domain)
        if not 0 <= raw < spec.modulus:
            raise InvalidArgumentError(
                f"raw {raw} outside [0, {spec.modulus}) for {domain}")
        last = self._last_t.get(domain)
        if last is not None and t_ns <= last:
            raise InvalidArgumentError(
                f"non-monotonic timestamp {t_ns} after {last} for {domain}")
        self._last_t[domain] = t_ns
        self._fh.write(format_record(t_ns, domain, raw) + "\n")
        self._fh.flush()

    def gap(self, t_ns: int, domain: RaplDomain) -> None:
        self._spec_for(domain)
        self._fh.write(f"{GAP_PREFIX}t_ns={t_ns} domain={domain}\n")
        self._fh.flush()

    def close(self, status: LogStatus = LogStatus.CLOSED) -> None:
        if self._closed:
            return
        if status is LogStatus.OPEN:
            raise InvalidArgumentError("cannot close a log with status open")
        self._fh.write(f"{END_PREFIX}status={status.value}\n")
        self._fh.flush()
        self._fh.close()
        self._closed = True

    def abandon(self) -> None:
        """Release the handle without a trailer (simulates a writer crash)."""
        if not self._closed:
            self._fh.close()
            self._closed = True

    def _spec_for(self, domain: RaplDomain) -> CounterSpec:
        try:
            return self.specs[domain]
        except KeyError:
            raise InvalidArgumentError(
                f"domain {domain} has no header in this log") from None

    def __enter__(self) -> "LogWriter":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        if exc_type is None:
            self.close(LogStatus.CLOSED)
        else:
            self.close(LogStatus.TRUNCATED)


@dataclass(frozen=True)
class ParsedLog:
    """One session log read back into per-domain sample series."""

    path: str
    node_id: str
    session_id: str
    epoch_wall_ns: int
    status: LogStatus
    series: Mapping[RaplDomain, SampleSeries]

    @property
    def flagged(self) -> bool:
        """True when the log needs attention before its numbers are trusted."""
        return (self.status is not LogStatus.CLOSED
                or any(s.gap_markers for s in self.series.values()))


def _parse_kv(body: str, path: str, lineno: int) -> dict[str, str]:
    out: dict[str, str] = {}
    for token in body.split():
        key, sep, value = token.partition("=")
        if not sep or not key:
            raise ParseError("malformed key=value token " + repr(token),
                             path=path, line=lineno)
        out[key] = value
    return out


def parse_log(path: str) -> ParsedLog:
    """Read a session log back into immutable sample series.

    Round-trips exactly what :class:`LogWriter` wrote: integer timestamps
    and raw counts are preserved bit for bit, the energy unit through its
    shortest decimal representation.

    A final line without a terminating newline is treated as torn by a
    crashed writer: it is dropped and the log is marked truncated.

    Raises:
        ParseError: Malformed line, unknown domain, non-monotonic timestamp,
            or out-of-range raw value (message carries path and line number).
        HeaderMismatchError: Record or gap before its domain header, no
            header at all, or headers disagreeing on node or epoch.
    """
    with open(path, "r", encoding="ascii") as fh:
        content = fh.read()
    torn_tail = bool(content) and not content.endswith("\n")
    lines = content.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if torn_tail and lines:
        dropped = lines.pop()
        log.warning("%s: dropping unterminated final line %r", path, dropped)

    node_id: str | None = None
    epoch_wall_ns: int | None = None
    specs: dict[RaplDomain, CounterSpec] = {}
    samples: dict[RaplDomain, list[RawSample]] = {}
    gaps: dict[RaplDomain, list[int]] = {}
    status = LogStatus.OPEN
    saw_trailer = False

    for lineno, line in enumerate(lines, start=1):
        if saw_trailer:
            raise ParseError("content after end trailer", path=path,
                             line=lineno)
        if line.startswith(HEADER_PREFIX):
            kv = _parse_kv(line[len(HEADER_PREFIX):], path, lineno)
            try:
                domain = RaplDomain.parse(kv["domain"])
                spec = CounterSpec(domain=domain,
                                   bit_width=int(kv["bit_width"]),
                                   energy_unit_joules=float(kv["unit_j"]))
                node = kv["node"]
                epoch = int(kv["epoch_wall_ns"])
            except (KeyError, ValueError, InvalidArgumentError) as exc:
                raise ParseError(f"bad header: {exc}", path=path,
                                 line=lineno) from None
            if node_id is None:
                node_id, epoch_wall_ns = node, epoch
            elif node != node_id or epoch != epoch_wall_ns:
                raise HeaderMismatchError(
                    f"{path}:{lineno}: header disagrees with earlier header "
                    f"(node {node!r} vs {node_id!r})")
            if domain in specs:
                raise ParseError(f"duplicate header for domain {domain}",
                                 path=path, line=lineno)
            specs[domain] = spec
            samples[domain] = []
            gaps[domain] = []
        elif line.startswith(GAP_PREFIX):
            kv = _parse_kv(line[len(GAP_PREFIX):], path, lineno)
            try:
                domain = RaplDomain.parse(kv["domain"])
                t_ns = int(kv["t_ns"])
            except (KeyError, ValueError, InvalidArgumentError) as exc:
                raise ParseError(f"bad gap marker: {exc}", path=path,
                                 line=lineno) from None
            if domain not in specs:
                raise HeaderMismatchError(
                    f"{path}:{lineno}: gap for {domain} before its header")
            gaps[domain].append(t_ns)
        elif line.startswith(END_PREFIX):
            kv = _parse_kv(line[len(END_PREFIX):], path, lineno)
            try:
                status = LogStatus(kv["status"])
            except (KeyError, ValueError) as exc:
                raise ParseError(f"bad end trailer: {exc}", path=path,
                                 line=lineno) from None
            if status is LogStatus.OPEN:
                raise ParseError("trailer may not declare status open",
                                 path=path, line=lineno)
            saw_trailer = True
        elif line.startswith("#"):
            raise ParseError(f"unknown directive {line.split()[0]!r}",
                             path=path, line=lineno)
        else:
            parts = line.split(",")
            if len(parts) != 3:
                raise ParseError(f"expected t_ns,domain,raw got {line!r}",
                                 path=path, line=lineno)
            try:
                t_ns = int(parts[0])
                domain = RaplDomain.parse(parts[1])
                raw = int(parts[2])
            except (ValueError, InvalidArgumentError) as exc:
                raise ParseError(str(exc), path=path, line=lineno) from None
            if domain not in specs:
                raise HeaderMismatchError(
                    f"{path}:{lineno}: record for {domain} before its header")
            if not 0 <= raw < specs[domain].modulus:
                raise ParseError(
                    f"raw {raw} outside [0, {specs[domain].modulus})",
                    path=path, line=lineno)
            dom_samples = samples[domain]
            if dom_samples and t_ns <= dom_samples[-1].t_ns:
                raise ParseError(
                    f"non-monotonic timestamp {t_ns} after "
                    f"{dom_samples[-1].t_ns}", path=path, line=lineno)
            dom_samples.append(RawSample(t_ns, raw))

    if node_id is None or epoch_wall_ns is None:
        raise HeaderMismatchError(f"{path}: no header line found")
    if torn_tail:
        status = LogStatus.TRUNCATED

    series = {
        domain: SampleSeries(node_id=node_id, spec=specs[domain],
                             samples=tuple(samples[domain]),
                             epoch_wall_ns=epoch_wall_ns,
                             gap_markers=tuple(gaps[domain]))
        for domain in specs
    }
    return ParsedLog(path=path, node_id=node_id,
                     session_id=session_from_filename(path, node_id),
                     epoch_wall_ns=epoch_wall_ns, status=status,
                     series=series)
