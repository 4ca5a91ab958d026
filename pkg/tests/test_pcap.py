import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scapy.all import Ether, PcapWriter, rdpcap, raw

from inca.pcap import (
    BadMagic,
    CaptureRecord,
    NonMonotonicTimestamps,
    TruncatedRecord,
    UnsupportedLinkType,
    read_pcap,
    write_pcap,
)


def big_endian_pcap(records, linktype=1):
    """Classic pcap written by hand in network byte order."""
    out = [struct.pack(">IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, 65535, linktype)]
    for sec, usec, frame in records:
        out.append(struct.pack(">IIII", sec, usec, len(frame), len(frame)) + frame)
    return b"".join(out)


def test_empty_capture():
    data = write_pcap([])
    assert len(data) == 24
    assert read_pcap(data) == []


def test_header_fields():
    data = write_pcap([CaptureRecord(0, 0, bytes(60))])
    assert len(data) == 100
    assert struct.unpack_from("<IHHiIII", data) == (0xA1B2C3D4, 2, 4, 0, 0, 65535, 1)
    assert struct.unpack_from("<IIII", data, 24) == (0, 0, 60, 60)


def test_swapped_magic():
    data = big_endian_pcap([(1, 2, b"\xaa" * 20), (3, 999999, b"\xbb" * 14)])
    assert struct.unpack_from("<I", data)[0] == 0xD4C3B2A1
    assert read_pcap(data) == [CaptureRecord(1, 2, b"\xaa" * 20), CaptureRecord(3, 999999, b"\xbb" * 14)]


def test_scapy_reads_our_files(tmp_path):
    frames = [raw(Ether(dst="02:00:00:00:00:01") / (b"x" * n)) for n in (10, 50, 1000)]
    records = [CaptureRecord.at_us(i * 1_500_000 + 7, f) for i, f in enumerate(frames)]
    path = tmp_path / "ours.pcap"
    path.write_bytes(write_pcap(records))
    got = rdpcap(str(path))
    assert [raw(p) for p in got] == frames
    assert [int(p.time * 1_000_000) for p in got] == [7, 1_500_007, 3_000_007]


def test_we_read_scapy_files(tmp_path):
    path = tmp_path / "theirs.pcap"
    frames = [raw(Ether() / (b"y" * n)) for n in (1, 2, 3)]
    with PcapWriter(str(path), linktype=1, sync=True) as w:
        for i, f in enumerate(frames):
            pkt = Ether(f)
            pkt.time = 10 + i
            w.write(pkt)
    recs = read_pcap(path.read_bytes())
    assert [r.frame for r in recs] == frames
    assert [r.ts_sec for r in recs] == [10, 11, 12]


def test_errors():
    with pytest.raises(BadMagic):
        read_pcap(b"not a pcap file at all, clearly")
    with pytest.raises(BadMagic):
        read_pcap(b"")
    with pytest.raises(UnsupportedLinkType):
        read_pcap(big_endian_pcap([], linktype=101))
    good = write_pcap([CaptureRecord(0, 0, bytes(60))])
    with pytest.raises(TruncatedRecord):
        read_pcap(good[:-1])
    with pytest.raises(TruncatedRecord):
        read_pcap(good[:30])
    with pytest.raises(NonMonotonicTimestamps):
        write_pcap([CaptureRecord(1, 0, b""), CaptureRecord(0, 999999, b"")])


records = st.lists(
    st.tuples(st.integers(0, 10**6), st.binary(min_size=14, max_size=200)), max_size=20
).map(lambda items: [CaptureRecord.at_us(t, f) for t, f in
                     zip(sorted(t for t, _ in items), (f for _, f in items))])


@settings(max_examples=200, deadline=None)
@given(records)
def test_round_trip(recs):
    data = write_pcap(recs)
    assert read_pcap(data) == recs
    assert write_pcap(read_pcap(data)) == data
