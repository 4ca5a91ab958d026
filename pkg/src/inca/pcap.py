"""Classic libpcap reading and writing (Ethernet link type only)."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterable

MAGIC = 0xA1B2C3D4
MAGIC_SWAPPED = 0xD4C3B2A1
VERSION = (2, 4)
LINKTYPE_ETHERNET = 1
SNAPLEN = 65535

GLOBAL_HEADER_LEN = 24
RECORD_HEADER_LEN = 16


class PcapError(ValueError):
    pass


class BadMagic(PcapError):
    pass


class TruncatedRecord(PcapError):
    pass


class UnsupportedLinkType(PcapError):
    pass


class NonMonotonicTimestamps(PcapError):
    pass


@dataclass(frozen=True)
class CaptureRecord:
    ts_sec: int
    ts_usec: int
    frame: bytes

    @classmethod
    def at_us(cls, t_us: int, frame: bytes) -> CaptureRecord:
        """Record stamped with a virtual time in microseconds since t=0."""
        return cls(t_us // 1_000_000, t_us % 1_000_000, bytes(frame))

    @property
    def time_key(self) -> tuple[int, int]:
        return self.ts_sec, self.ts_usec


def read_pcap(data: bytes) -> list[CaptureRecord]:
    if len(data) < GLOBAL_HEADER_LEN:
        raise BadMagic(f"file too short for a pcap header ({len(data)} octets)")
    (magic,) = struct.unpack_from("<I", data)
    if magic == MAGIC:
        endian = "<"
    elif magic == MAGIC_SWAPPED:
        endian = ">"
    else:
        raise BadMagic(f"unrecognized pcap magic 0x{magic:08x}")
    _, _, _, _, _, linktype = struct.unpack_from(endian + "HHiIII", data, 4)
    if linktype != LINKTYPE_ETHERNET:
        raise UnsupportedLinkType(f"link type {linktype} is not Ethernet (1)")

    records = []
    pos = GLOBAL_HEADER_LEN
    while pos < len(data):
        if pos + RECORD_HEADER_LEN > len(data):
            raise TruncatedRecord(f"record header at offset {pos} is cut short")
        ts_sec, ts_usec, incl_len, _orig = struct.unpack_from(endian + "IIII", data, pos)
        pos += RECORD_HEADER_LEN
        if pos + incl_len > len(data):
            raise TruncatedRecord(
                f"record at offset {pos - RECORD_HEADER_LEN} declares {incl_len} octets, "
                f"{len(data) - pos} remain")
        records.append(CaptureRecord(ts_sec, ts_usec, bytes(data[pos:pos + incl_len])))
        pos += incl_len
    return records


def write_pcap(records: Iterable[CaptureRecord]) -> bytes:
    out = [struct.pack("<IHHiIII", MAGIC, *VERSION, 0, 0, SNAPLEN, LINKTYPE_ETHERNET)]
    last = (0, 0)
    for rec in records:
        if rec.time_key < last:
            raise NonMonotonicTimestamps(f"record at {rec.time_key} follows {last}")
        last = rec.time_key
        out.append(struct.pack("<IIII", rec.ts_sec, rec.ts_usec, len(rec.frame), len(rec.frame)))
        out.append(rec.frame)
    return b"".join(out)
