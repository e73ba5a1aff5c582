"""Flow record ingestion: parsing, darknet spoof filtering, block mapping, anonymization.

Records arrive as CSV (``timestamp,src[,ttl,protocol,dst,icmp]``, header optional)
or line-delimited JSON objects carrying the same keys.
"""

from __future__ import annotations

import csv
import hashlib
import hmac
import io
import ipaddress
import json
import logging
import math
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, Union

from .errors import ConfigError, FormatError

logger = logging.getLogger(__name__)

IPAddress = Union[ipaddress.IPv4Address, ipaddress.IPv6Address]

V4_PREFIX_LEN = 24
V6_PREFIX_LEN = 48
_WIDTH = {"v4": 32, "v6": 128}
_PREFIX = {"v4": V4_PREFIX_LEN, "v6": V6_PREFIX_LEN}

CSV_COLUMNS = ("timestamp", "src", "ttl", "protocol", "dst", "icmp")
MAX_MALFORMED_FRACTION = 0.5
SPOOF_TTL_LIMIT = 200
SPOOF_PROTOCOLS = frozenset({0, 150})

_TRUE = {"1", "true", "t", "yes", "y"}
_FALSE = {"0", "false", "f", "no", "n"}


@dataclass(frozen=True, order=True)
class BlockId:
    """A /24 (IPv4) or /48 (IPv6) block; ``prefix`` is the network address as an int."""

    family: str
    prefix: int

    def __post_init__(self) -> None:
        if self.family not in _WIDTH:
            raise ValueError(f"unknown address family {self.family!r}")
        host_bits = _WIDTH[self.family] - _PREFIX[self.family]
        if self.prefix < 0 or self.prefix >> _WIDTH[self.family]:
            raise ValueError(f"prefix out of range for {self.family}")
        if self.prefix & ((1 << host_bits) - 1):
            raise ValueError("block prefix has host bits set")

    @property
    def prefix_len(self) -> int:
        return _PREFIX[self.family]

    @property
    def network(self) -> ipaddress.IPv4Network | ipaddress.IPv6Network:
        return ipaddress.ip_network((self.prefix, self.prefix_len))

    def __str__(self) -> str:
        return str(self.network)

    @classmethod
    def parse(cls, text: str) -> "BlockId":
        net = ipaddress.ip_network(text.strip(), strict=True)
        family = "v4" if net.version == 4 else "v6"
        if net.prefixlen != _PREFIX[family]:
            raise ValueError(f"{text!r} is not a /{_PREFIX[family]} block")
        return cls(family, int(net.network_address))


@dataclass(frozen=True)
class FlowObservation:
    """One timestamped appearance of a source address."""

    timestamp: float
    src: IPAddress
    ttl: int | None = None
    protocol: int | None = None
    dst: IPAddress | None = None
    icmp_flag: bool | None = None

    def __post_init__(self) -> None:
        if not math.isfinite(self.timestamp) or self.timestamp < 0:
            raise ValueError(f"timestamp must be finite and >= 0, got {self.timestamp}")
        for name in ("ttl", "protocol"):
            value = getattr(self, name)
            if value is not None and not 0 <= value <= 255:
                raise ValueError(f"{name} out of range: {value}")
        if self.dst is not None and self.dst.version != self.src.version:
            raise ValueError("src and dst address families differ")


@dataclass
class ParseResult:
    records: list[FlowObservation] = field(default_factory=list)
    lines: int = 0
    malformed: int = 0

    def __iter__(self) -> Iterator[FlowObservation]:
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)


def _family(addr: IPAddress) -> str:
    return "v4" if addr.version == 4 else "v6"


def _as_address(value: str | IPAddress) -> IPAddress:
    if isinstance(value, (ipaddress.IPv4Address, ipaddress.IPv6Address)):
        return value
    return ipaddress.ip_address(value.strip())


def block_of(src: str | IPAddress) -> BlockId:
    addr = _as_address(src)
    family = _family(addr)
    host_bits = _WIDTH[family] - _PREFIX[family]
    return BlockId(family, (int(addr) >> host_bits) << host_bits)


def _opt_int(value) -> int | None:
    if value is None or value == "":
        return None
    if isinstance(value, bool):
        raise ValueError("boolean where integer expected")
    if isinstance(value, float) and not value.is_integer():
        raise ValueError(f"non-integer value {value}")
    return int(value)


def _opt_bool(value) -> bool | None:
    if value is None or value == "":
        return None
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in _TRUE:
        return True
    if text in _FALSE:
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _observation_from_fields(fields: dict) -> FlowObservation:
    ts = fields.get("timestamp")
    src = fields.get("src")
    if ts is None or src is None or ts == "" or src == "":
        raise ValueError("timestamp and src are required")
    if isinstance(ts, bool):
        raise ValueError("boolean timestamp")
    dst = fields.get("dst")
    return FlowObservation(
        timestamp=float(ts),
        src=_as_address(str(src)),
        ttl=_opt_int(fields.get("ttl")),
        protocol=_opt_int(fields.get("protocol")),
        dst=_as_address(str(dst)) if dst not in (None, "") else None,
        icmp_flag=_opt_bool(fields.get("icmp")),
    )


def _text_lines(stream: IO) -> Iterator[str]:
    for raw in stream:
        if isinstance(raw, bytes):
            # undecodable bytes become replacement chars and fail field parsing
            raw = raw.decode("utf-8", errors="replace")
        yield raw.rstrip("\r\n")


def parse_flow_records(stream: IO, fmt: str = "csv") -> ParseResult:
    """Parse a flow-record stream, skipping (and counting) malformed lines.

    Blank lines and ``#`` comment lines are ignored and not counted.  A CSV header
    row (first field ``timestamp``) sets the column order.  Raises ``FormatError``
    when more than half the data lines are malformed.
    """
    if fmt not in ("csv", "jsonl", "line-json", "json"):
        raise ConfigError(f"unknown record format {fmt!r}")
    result = ParseResult()
    columns: tuple[str, ...] = CSV_COLUMNS
    seen_first = False
    for line in _text_lines(stream):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if fmt == "csv":
            row = next(csv.reader([stripped]))
            if not seen_first:
                seen_first = True
                if row and row[0].strip().lower() == "timestamp":
                    columns = tuple(c.strip().lower() for c in row)
                    continue
            result.lines += 1
            if len(row) < 2 or len(row) > len(columns):
                result.malformed += 1
                continue
            fields = dict(zip(columns, (c.strip() for c in row)))
        else:
            result.lines += 1
            try:
                fields = json.loads(stripped)
            except json.JSONDecodeError:
                result.malformed += 1
                continue
            if not isinstance(fields, dict):
                result.malformed += 1
                continue
        try:
            result.records.append(_observation_from_fields(fields))
        except (ValueError, TypeError):
            result.malformed += 1
    if result.lines and result.malformed > MAX_MALFORMED_FRACTION * result.lines:
        raise FormatError(
            f"{result.malformed} of {result.lines} lines malformed; wrong --format?"
        )
    if result.malformed:
        logger.warning("skipped %d malformed of %d lines", result.malformed, result.lines)
    return result


def parse_flow_text(text: str, fmt: str = "csv") -> ParseResult:
    return parse_flow_records(io.StringIO(text), fmt)


def filter_spoofed(obs: FlowObservation) -> bool:
    """Darknet spoof filter.  Returns True to keep the record."""
    if obs.ttl is None or obs.protocol is None or obs.dst is None or obs.icmp_flag is None:
        raise ConfigError("darknet filtering needs ttl, protocol, dst and icmp on every record")
    if obs.ttl > SPOOF_TTL_LIMIT and not obs.icmp_flag:
        return False
    if obs.src.version == 4 and (int(obs.src) & 0xFF) in (0, 255):
        return False
    if obs.src == obs.dst:
        return False
    if obs.protocol in SPOOF_PROTOCOLS:
        return False
    return True


def _feistel_round(key: bytes, prefix: bytes, rnd: int, half: int, half_bits: int) -> int:
    nbytes = (half_bits + 7) // 8
    msg = prefix + bytes([rnd]) + half.to_bytes(nbytes, "big")
    digest = hmac.new(key, msg, hashlib.sha256).digest()
    return int.from_bytes(digest[:nbytes], "big") & ((1 << half_bits) - 1)


def anonymize_address(src: str | IPAddress, key: bytes, rounds: int = 8) -> IPAddress:
    """Replace host bits with a keyed permutation of them; the block prefix is kept.

    The permutation is a balanced Feistel network over the host bits (8 for IPv4,
    80 for IPv6) keyed by HMAC-SHA256 and tweaked by the block prefix, so it is a
    bijection inside every block and deterministic for a given key.
    """
    if not key:
        raise ConfigError("anonymization key must be non-empty")
    addr = _as_address(src)
    family = _family(addr)
    width = _WIDTH[family]
    host_bits = width - _PREFIX[family]
    half_bits = host_bits // 2
    mask = (1 << half_bits) - 1
    value = int(addr)
    prefix = value >> host_bits
    host = value & ((1 << host_bits) - 1)
    tweak = prefix.to_bytes((width - host_bits) // 8, "big")
    left, right = host >> half_bits, host & mask
    for rnd in range(rounds):
        left, right = right, left ^ _feistel_round(key, tweak, rnd, right, half_bits)
    new_host = (left << half_bits) | right
    return ipaddress.ip_address((prefix << host_bits) | new_host)


def read_key_file(path) -> bytes:
    with open(path, "rb") as fh:
        key = fh.read().strip()
    if not key:
        raise ConfigError(f"anonymization key file {path} is empty")
    return key


@dataclass
class IngestStats:
    lines: int = 0
    malformed: int = 0
    kept: int = 0
    dropped: int = 0


def prepare_observations(
    records: Iterable[FlowObservation],
    mode: str = "service",
    anon_key: bytes | None = None,
    stats: IngestStats | None = None,
) -> list[FlowObservation]:
    """Apply mode-dependent filtering and optional anonymization, preserving order."""
    if mode not in ("service", "darknet"):
        raise ConfigError(f"unknown mode {mode!r}")
    kept = []
    for obs in records:
        if mode == "darknet" and not filter_spoofed(obs):
            if stats is not None:
                stats.dropped += 1
            continue
        if anon_key is not None:
            obs = FlowObservation(obs.timestamp, anonymize_address(obs.src, anon_key))
        kept.append(obs)
    if stats is not None:
        stats.kept += len(kept)
    return kept


def write_observations(records: Iterable[FlowObservation], fh, header: Iterable[str] = ()) -> None:
    """Write ``timestamp,src`` CSV (with a header row) readable by ``parse_flow_records``."""
    for line in header:
        fh.write(f"# {line}\n")
    fh.write("timestamp,src\n")
    for obs in records:
        ts = obs.timestamp
        fh.write(f"{int(ts) if float(ts).is_integer() else repr(ts)},{obs.src}\n")
