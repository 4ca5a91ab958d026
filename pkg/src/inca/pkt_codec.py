"""Bit-exact codec for every header the INCA dataplane touches.

Layer stack, outermost first::

    Ethernet II
    IPv6                         outer
    [SRH, routing type 4]
    [IPv6]                       when the SRH (or outer header) carries IPv6-in-IPv6
    UDP                          port 2152
    GTP-U                        + extension headers, 0x85 PDU Session Container
    inner IPv6 + UDP | TCP | ICMPv6

Parsing stops at the deepest recognized layer and keeps everything below it
as opaque ``payload`` bytes, so ``serialize(parse_frame(b)) == b`` holds for
every frame that parses.  Length fields and checksums are recomputed by
:func:`serialize`; a checksum set to ``None`` is filled in.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from ipaddress import IPv6Address
from typing import Optional, Union

ETH_P_IPV6 = 0x86DD

IPPROTO_TCP = 6
IPPROTO_UDP = 17
IPPROTO_IPV6 = 41
IPPROTO_ROUTING = 43
IPPROTO_ICMPV6 = 58
IPPROTO_NONE = 59

SRH_ROUTING_TYPE = 4
GTPU_PORT = 2152
GTPU_GPDU = 0xFF
EXT_PDU_SESSION_CONTAINER = 0x85
PDU_TYPE_UL = 1

ETH_LEN = 14
IPV6_LEN = 40
UDP_LEN = 8
GTPU_LEN = 8

AddressLike = Union[IPv6Address, str, bytes, int]


class CodecError(ValueError):
    """Base class for wire format errors."""


class TruncatedHeader(CodecError):
    """A header or declared length runs past the available bytes."""


class MalformedSrh(CodecError):
    """Routing header type 4 whose fields are mutually inconsistent."""


class MalformedGtpu(CodecError):
    """GTP-U header with a bad version, PT flag, length or extension chain."""


class InconsistentLayers(CodecError):
    """A mutated packet can no longer be encoded."""


def ipv6(addr: AddressLike) -> IPv6Address:
    return addr if isinstance(addr, IPv6Address) else IPv6Address(addr)


def _need(data: bytes, offset: int, size: int, what: str) -> None:
    if offset + size > len(data):
        raise TruncatedHeader(
            f"{what}: need {size} octets at offset {offset}, have {len(data) - offset}")


# -- checksums ---------------------------------------------------------------

def ones_complement_sum(data: bytes) -> int:
    """16-bit one's complement sum of ``data`` (zero padded to even length)."""
    if len(data) % 2:
        data += b"\x00"
    total = sum(struct.unpack(f"!{len(data) // 2}H", data))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return total


def _pseudo_header(src: AddressLike, dst: AddressLike, length: int, proto: int) -> bytes:
    return ipv6(src).packed + ipv6(dst).packed + struct.pack("!IxxxB", length, proto)


def l4_checksum(src: AddressLike, dst: AddressLike, proto: int,
                segment: bytes, checksum_offset: int) -> int:
    """Checksum of an upper-layer segment over the IPv6 pseudo-header.

    The checksum field at ``checksum_offset`` is treated as zero.
    """
    zeroed = segment[:checksum_offset] + b"\x00\x00" + segment[checksum_offset + 2:]
    total = ones_complement_sum(_pseudo_header(src, dst, len(segment), proto) + zeroed)
    return ~total & 0xFFFF


def compute_udp_checksum(src: AddressLike, dst: AddressLike, udp_bytes: bytes) -> int:
    """UDP checksum over the IPv6 pseudo-header; a zero result is sent as 0xFFFF."""
    return l4_checksum(src, dst, IPPROTO_UDP, udp_bytes, 6) or 0xFFFF


def udp_checksum_ok(src: AddressLike, dst: AddressLike, udp_bytes: bytes) -> bool:
    pseudo = _pseudo_header(src, dst, len(udp_bytes), IPPROTO_UDP)
    return ones_complement_sum(pseudo + udp_bytes) == 0xFFFF


# -- headers -----------------------------------------------------------------

@dataclass
class EthernetHeader:
    dst_mac: bytes = bytes(6)
    src_mac: bytes = bytes(6)
    ethertype: int = ETH_P_IPV6

    @classmethod
    def parse(cls, data: bytes, offset: int = 0) -> EthernetHeader:
        _need(data, offset, ETH_LEN, "ethernet")
        (ethertype,) = struct.unpack_from("!H", data, offset + 12)
        return cls(bytes(data[offset:offset + 6]), bytes(data[offset + 6:offset + 12]), ethertype)

    def pack(self) -> bytes:
        if len(self.dst_mac) != 6 or len(self.src_mac) != 6:
            raise InconsistentLayers("MAC addresses must be 6 octets")
        return self.dst_mac + self.src_mac + struct.pack("!H", self.ethertype)


@dataclass
class Ipv6Header:
    src: IPv6Address
    dst: IPv6Address
    next_header: int
    hop_limit: int = 64
    traffic_class: int = 0
    flow_label: int = 0
    payload_length: int = field(default=0, compare=False)

    version = 6

    @classmethod
    def parse(cls, data: bytes, offset: int = 0) -> Ipv6Header:
        _need(data, offset, IPV6_LEN, "ipv6")
        word, plen, nh, hlim = struct.unpack_from("!IHBB", data, offset)
        if word >> 28 != 6:
            raise CodecError(f"not an IPv6 header (version {word >> 28})")
        return cls(
            src=IPv6Address(bytes(data[offset + 8:offset + 24])),
            dst=IPv6Address(bytes(data[offset + 24:offset + 40])),
            next_header=nh,
            hop_limit=hlim,
            traffic_class=(word >> 20) & 0xFF,
            flow_label=word & 0xFFFFF,
            payload_length=plen,
        )

    def pack(self, payload: bytes = b"") -> bytes:
        """Header followed by ``payload``; ``payload_length`` is refreshed."""
        if len(payload) > 0xFFFF:
            raise InconsistentLayers(f"IPv6 payload of {len(payload)} octets exceeds 65535")
        self.payload_length = len(payload)
        try:
            word = (6 << 28) | (self.traffic_class << 20) | self.flow_label
            fixed = struct.pack("!IHBB", word, len(payload), self.next_header, self.hop_limit)
        except struct.error as exc:
            raise InconsistentLayers(f"ipv6: {exc}") from None
        return fixed + ipv6(self.src).packed + ipv6(self.dst).packed + payload


@dataclass
class SrhHeader:
    """Segment Routing Header.

    ``segment_list`` is in wire order: index 0 is the last segment of the
    path, and ``segment_list[segments_left]`` is the active segment.
    """

    next_header: int
    segments_left: int
    segment_list: list[IPv6Address]
    flags: int = 0
    tag: int = 0

    routing_type = SRH_ROUTING_TYPE

    @classmethod
    def from_path(cls, path: list[AddressLike], next_header: int) -> SrhHeader:
        """SRH steering through ``path`` (traversal order), first segment active."""
        sids = [ipv6(s) for s in reversed(path)]
        return cls(next_header=next_header, segments_left=len(sids) - 1, segment_list=sids)

    @property
    def hdr_ext_len(self) -> int:
        return 2 * len(self.segment_list)

    @property
    def last_entry(self) -> int:
        return len(self.segment_list) - 1

    @property
    def path(self) -> list[IPv6Address]:
        return self.segment_list[::-1]

    @property
    def size(self) -> int:
        return 8 + 16 * len(self.segment_list)

    @classmethod
    def parse(cls, data: bytes, offset: int = 0) -> SrhHeader:
        _need(data, offset, 8, "srh")
        nh, ext_len, rtype, sl, last, flags, tag = struct.unpack_from("!BBBBBBH", data, offset)
        if rtype != SRH_ROUTING_TYPE:
            raise MalformedSrh(f"routing type {rtype} is not 4")
        _need(data, offset, 8 + 8 * ext_len, "srh segment list")
        if ext_len % 2 or ext_len != 2 * (last + 1):
            raise MalformedSrh(f"hdr_ext_len {ext_len} does not match last_entry {last}")
        if sl > last:
            raise MalformedSrh(f"segments_left {sl} exceeds last_entry {last}")
        base = offset + 8
        sids = [IPv6Address(bytes(data[base + 16 * i:base + 16 * (i + 1)]))
                for i in range(last + 1)]
        return cls(next_header=nh, segments_left=sl, segment_list=sids, flags=flags, tag=tag)

    def pack(self, payload: bytes = b"") -> bytes:
        n = len(self.segment_list)
        if not 1 <= n <= 128:
            raise InconsistentLayers(f"SRH needs 1..128 segments, got {n}")
        if not 0 <= self.segments_left < n:
            raise InconsistentLayers(f"segments_left {self.segments_left} outside 0..{n - 1}")
        try:
            fixed = struct.pack("!BBBBBBH", self.next_header, 2 * n, SRH_ROUTING_TYPE,
                                self.segments_left, n - 1, self.flags, self.tag)
        except struct.error as exc:
            raise InconsistentLayers(f"srh: {exc}") from None
        return fixed + b"".join(ipv6(s).packed for s in self.segment_list) + payload


@dataclass
class UdpHeader:
    src_port: int
    dst_port: int
    checksum: Optional[int] = field(default=None, compare=False)
    length: int = field(default=0, compare=False)

    @classmethod
    def parse(cls, data: bytes, offset: int = 0) -> UdpHeader:
        _need(data, offset, UDP_LEN, "udp")
        sport, dport, length, csum = struct.unpack_from("!HHHH", data, offset)
        return cls(sport, dport, csum, length)

    def pack(self, payload: bytes, src: AddressLike, dst: AddressLike) -> bytes:
        """Segment with refreshed length; a ``None`` checksum is computed."""
        length = UDP_LEN + len(payload)
        if length > 0xFFFF:
            raise InconsistentLayers(f"UDP length {length} exceeds 65535")
        self.length = length
        try:
            segment = struct.pack("!HHHH", self.src_port, self.dst_port, length,
                                  self.checksum or 0) + payload
        except struct.error as exc:
            raise InconsistentLayers(f"udp: {exc}") from None
        if self.checksum is None:
            self.checksum = compute_udp_checksum(src, dst, segment)
            segment = segment[:6] + struct.pack("!H", self.checksum) + segment[8:]
        return segment


@dataclass
class TcpSummary:
    src_port: int
    dst_port: int
    rest: bytes = bytes(16)  # sequence number through options, kept verbatim

    def pack(self) -> bytes:
        return struct.pack("!HH", self.src_port, self.dst_port) + self.rest


@dataclass
class Icmpv6Summary:
    type: int
    code: int
    checksum: int = 0

    def pack(self) -> bytes:
        return struct.pack("!BBH", self.type, self.code, self.checksum)


@dataclass
class ExtensionHeader:
    """GTP-U extension header kept opaque; ``content`` excludes length and next-type octets."""

    ext_type: int
    content: bytes

    def pack_content(self) -> bytes:
        return self.content


@dataclass
class PduSessionContainer:
    """PDU Session Container (extension type 0x85).

    Only the PDU type and QFI are interpreted; the remaining flag bits and
    any further content octets are carried through unchanged.
    """

    pdu_type: int = PDU_TYPE_UL
    qfi: int = 0
    flags_lo: int = 0   # low nibble of the first content octet
    flags_hi: int = 0   # top two bits of the second content octet
    extra: bytes = b""

    ext_type = EXT_PDU_SESSION_CONTAINER

    @classmethod
    def from_content(cls, content: bytes) -> PduSessionContainer:
        return cls(pdu_type=content[0] >> 4, qfi=content[1] & 0x3F,
                   flags_lo=content[0] & 0x0F, flags_hi=content[1] >> 6,
                   extra=bytes(content[2:]))

    @property
    def ext_len(self) -> int:
        return (len(self.extra) + 4) // 4

    def pack_content(self) -> bytes:
        if not 0 <= self.qfi <= 63:
            raise InconsistentLayers(f"QFI {self.qfi} outside 0..63")
        if not 0 <= self.pdu_type <= 15 or len(self.extra) % 4:
            raise InconsistentLayers("bad PDU session container fields")
        return bytes([(self.pdu_type << 4) | self.flags_lo,
                      (self.flags_hi << 6) | self.qfi]) + self.extra


GtpuExtension = Union[PduSessionContainer, ExtensionHeader]


@dataclass
class GtpuHeader:
    teid: int
    message_type: int = GTPU_GPDU
    e_flag: bool = False
    s_flag: bool = False
    pn_flag: bool = False
    sequence: int = 0
    npdu: int = 0
    ext_headers: list[GtpuExtension] = field(default_factory=list)
    spare: int = 0            # reserved bit of the flags octet
    unused_next_ext: int = 0  # next-extension octet when E is clear
    length: int = field(default=0, compare=False)

    version = 1
    pt_flag = 1

    @property
    def has_optional(self) -> bool:
        return self.e_flag or self.s_flag or self.pn_flag

    @property
    def header_size(self) -> int:
        size = GTPU_LEN + (4 if self.has_optional else 0)
        for ext in self.ext_headers:
            size += len(ext.pack_content()) + 2
        return size

    @classmethod
    def parse(cls, data: bytes, offset: int, end: int) -> tuple[GtpuHeader, int]:
        """Parse a GTP-U header in ``data[offset:end]``; returns it and the T-PDU offset."""
        if offset + GTPU_LEN > end:
            raise TruncatedHeader(f"gtpu: need 8 octets at offset {offset}, have {end - offset}")
        flags, mtype, length, teid = struct.unpack_from("!BBHI", data, offset)
        if flags >> 5 != 1 or not flags & 0x10:
            raise MalformedGtpu(f"version {flags >> 5}, PT {(flags >> 4) & 1}")
        if offset + GTPU_LEN + length > end:
            raise TruncatedHeader(
                f"gtpu length {length} exceeds the {end - offset - GTPU_LEN} octets available")
        if offset + GTPU_LEN + length < end:
            raise MalformedGtpu(f"gtpu length {length} leaves trailing octets in the datagram")
        hdr = cls(teid=teid, message_type=mtype, e_flag=bool(flags & 4), s_flag=bool(flags & 2),
                  pn_flag=bool(flags & 1), spare=(flags >> 3) & 1, length=length)
        pos = offset + GTPU_LEN
        if not hdr.has_optional:
            return hdr, pos
        if pos + 4 > end:
            raise MalformedGtpu("optional fields run past the GTP-U message")
        hdr.sequence, hdr.npdu, next_type = struct.unpack_from("!HBB", data, pos)
        pos += 4
        if not hdr.e_flag:
            hdr.unused_next_ext = next_type
            return hdr, pos
        while next_type:
            if pos + 4 > end:
                raise MalformedGtpu("extension header runs past the GTP-U message")
            units = data[pos]
            if units == 0 or pos + 4 * units > end:
                raise MalformedGtpu(f"bad extension length {units} at offset {pos}")
            content = bytes(data[pos + 1:pos + 4 * units - 1])
            if next_type == EXT_PDU_SESSION_CONTAINER:
                hdr.ext_headers.append(PduSessionContainer.from_content(content))
            else:
                hdr.ext_headers.append(ExtensionHeader(next_type, content))
            next_type = data[pos + 4 * units - 1]
            pos += 4 * units
        return hdr, pos

    def pack(self, tpdu: bytes = b"") -> bytes:
        if self.ext_headers and not self.e_flag:
            raise InconsistentLayers("extension headers present but E flag clear")
        opt = b""
        if self.has_optional:
            first = self.ext_headers[0].ext_type if self.ext_headers else 0
            opt = struct.pack("!HBB", self.sequence, self.npdu,
                              first if self.e_flag else self.unused_next_ext)
        chain = []
        for i, ext in enumerate(self.ext_headers):
            content = ext.pack_content()
            if (len(content) + 2) % 4:
                raise InconsistentLayers(f"extension 0x{ext.ext_type:02x} is not 4-octet aligned")
            nxt = self.ext_headers[i + 1].ext_type if i + 1 < len(self.ext_headers) else 0
            chain.append(bytes([(len(content) + 2) // 4]) + content + bytes([nxt]))
        body = opt + b"".join(chain) + tpdu
        if len(body) > 0xFFFF:
            raise InconsistentLayers(f"GTP-U length {len(body)} exceeds 65535")
        self.length = len(body)
        flags = 0x30 | (self.spare << 3) | (self.e_flag << 2) | (self.s_flag << 1) | self.pn_flag
        try:
            return struct.pack("!BBHI", flags, self.message_type, len(body), self.teid) + body
        except struct.error as exc:
            raise InconsistentLayers(f"gtpu: {exc}") from None

    @property
    def pdu_container(self) -> Optional[PduSessionContainer]:
        for ext in self.ext_headers:
            if isinstance(ext, PduSessionContainer):
                return ext
        return None


L4Summary = Union[UdpHeader, TcpSummary, Icmpv6Summary]


@dataclass
class InnerPacket:
    """The user's own IPv6 packet carried in the GTP-U tunnel."""

    ipv6: Ipv6Header
    l4: Optional[L4Summary]
    payload: bytes = b""

    @property
    def l4_proto(self) -> int:
        return self.ipv6.next_header

    @property
    def ports(self) -> tuple[int, int]:
        if isinstance(self.l4, (UdpHeader, TcpSummary)):
            return self.l4.src_port, self.l4.dst_port
        return 0, 0

    @classmethod
    def parse(cls, data: bytes) -> Optional[InnerPacket]:
        """Parse a whole inner packet, or ``None`` if it is not a self-consistent IPv6 packet."""
        if len(data) < IPV6_LEN or data[0] >> 4 != 6:
            return None
        hdr = Ipv6Header.parse(data)
        if IPV6_LEN + hdr.payload_length != len(data):
            return None
        body = data[IPV6_LEN:]
        l4: Optional[L4Summary] = None
        nh = hdr.next_header
        if nh == IPPROTO_UDP and len(body) >= UDP_LEN:
            udp = UdpHeader.parse(body)
            if udp.length == len(body):
                l4, body = udp, body[UDP_LEN:]
        elif nh == IPPROTO_TCP and len(body) >= 20:
            hlen = (body[12] >> 4) * 4
            if 20 <= hlen <= len(body):
                sport, dport = struct.unpack_from("!HH", body)
                l4, body = TcpSummary(sport, dport, bytes(body[4:hlen])), body[hlen:]
        elif nh == IPPROTO_ICMPV6 and len(body) >= 4:
            l4, body = Icmpv6Summary(*struct.unpack_from("!BBH", body)), body[4:]
        return cls(hdr, l4, bytes(body))

    def pack(self) -> bytes:
        if isinstance(self.l4, UdpHeader):
            segment = self.l4.pack(self.payload, self.ipv6.src, self.ipv6.dst)
        elif self.l4 is None:
            segment = self.payload
        else:
            segment = self.l4.pack() + self.payload
        return self.ipv6.pack(segment)


@dataclass
class ParsedPacket:
    """Layered view of one frame.

    ``encap_ipv6`` is the IPv6 header carried inside an SRv6 encapsulation
    (outer IPv6 + SRH, next header 41); GTP traffic that INCA steers through
    a chain shows up there.  ``payload`` holds the opaque bytes after the
    deepest parsed outer layer and ``trailer`` any link padding beyond the
    outer IPv6 payload length.
    """

    eth: EthernetHeader
    outer_ipv6: Optional[Ipv6Header] = None
    srh: Optional[SrhHeader] = None
    encap_ipv6: Optional[Ipv6Header] = None
    transport: Optional[UdpHeader] = None
    gtpu: Optional[GtpuHeader] = None
    inner: Optional[InnerPacket] = None
    payload: bytes = b""
    trailer: bytes = b""
    raw: bytes = field(default=b"", compare=False, repr=False)
    layer_offsets: dict[str, int] = field(default_factory=dict, compare=False)

    @property
    def pdu_container(self) -> Optional[PduSessionContainer]:
        return self.gtpu.pdu_container if self.gtpu else None

    @property
    def transport_ipv6(self) -> Optional[Ipv6Header]:
        """The IPv6 header that directly carries the UDP/GTP-U layers."""
        return self.encap_ipv6 or self.outer_ipv6

    @property
    def ipv6_packet(self) -> bytes:
        """Outer IPv6 packet bytes (frame minus L2 header and trailer)."""
        data = serialize(self)
        return data[ETH_LEN:len(data) - len(self.trailer)]


def parse_frame(data: bytes) -> ParsedPacket:
    """Parse an Ethernet frame as deep as the layer stack allows."""
    data = bytes(data)
    eth = EthernetHeader.parse(data)
    pkt = ParsedPacket(eth=eth, raw=data, layer_offsets={"eth": 0})
    pos = ETH_LEN
    if eth.ethertype != ETH_P_IPV6 or len(data) < pos + IPV6_LEN or data[pos] >> 4 != 6:
        pkt.payload = data[pos:]
        return pkt

    outer = Ipv6Header.parse(data, pos)
    end = pos + IPV6_LEN + outer.payload_length
    if end > len(data):
        raise TruncatedHeader(
            f"ipv6 payload length {outer.payload_length} exceeds {len(data) - pos - IPV6_LEN} octets")
    pkt.outer_ipv6 = outer
    pkt.layer_offsets["ipv6"] = pos
    pkt.trailer = data[end:]
    pos += IPV6_LEN
    nh = outer.next_header

    if nh == IPPROTO_ROUTING and pos + 3 <= end and data[pos + 2] == SRH_ROUTING_TYPE:
        pkt.srh = SrhHeader.parse(data[:end], pos)
        pkt.layer_offsets["srh"] = pos
        pos += pkt.srh.size
        nh = pkt.srh.next_header

    if nh == IPPROTO_IPV6 and pos + IPV6_LEN <= end and data[pos] >> 4 == 6:
        encap = Ipv6Header.parse(data, pos)
        if pos + IPV6_LEN + encap.payload_length > end:
            raise TruncatedHeader(f"encapsulated ipv6 payload length {encap.payload_length} "
                                  f"exceeds {end - pos - IPV6_LEN} octets")
        if pos + IPV6_LEN + encap.payload_length == end:
            pkt.encap_ipv6 = encap
            pkt.layer_offsets["encap_ipv6"] = pos
            pos += IPV6_LEN
            nh = encap.next_header

    if nh == IPPROTO_UDP and pos + UDP_LEN <= end:
        udp = UdpHeader.parse(data, pos)
        if pos + udp.length > end:
            raise TruncatedHeader(f"udp length {udp.length} exceeds {end - pos} octets")
        if udp.length >= UDP_LEN and pos + udp.length == end:
            pkt.transport = udp
            pkt.layer_offsets["udp"] = pos
            pos += UDP_LEN
            if udp.dst_port == GTPU_PORT:
                gtpu, tpdu = GtpuHeader.parse(data, pos, end)
                pkt.gtpu = gtpu
                pkt.layer_offsets["gtpu"] = pos
                pos = tpdu
                if gtpu.message_type == GTPU_GPDU and pos < end:
                    inner = InnerPacket.parse(data[pos:end])
                    if inner is not None:
                        pkt.inner = inner
                        pkt.layer_offsets["inner"] = pos
                        if inner.l4 is not None:
                            pkt.layer_offsets["inner_l4"] = pos + IPV6_LEN
                        pos = end

    pkt.payload = data[pos:end]
    return pkt


def serialize(pkt: ParsedPacket) -> bytes:
    """Encode ``pkt``, recomputing every length field.

    For an unmodified parse result this reproduces ``pkt.raw`` exactly.
    """
    body = pkt.inner.pack() if pkt.inner is not None else b""
    body += pkt.payload
    if pkt.gtpu is not None:
        if pkt.transport is None:
            raise InconsistentLayers("GTP-U layer without UDP")
        body = pkt.gtpu.pack(body)
    elif pkt.inner is not None:
        raise InconsistentLayers("inner packet without GTP-U")
    if pkt.transport is not None:
        carrier = pkt.transport_ipv6
        if carrier is None:
            raise InconsistentLayers("UDP layer without IPv6")
        dst = carrier.dst
        if carrier is pkt.outer_ipv6 and pkt.srh is not None:
            dst = pkt.srh.segment_list[0]  # pseudo-header uses the final destination
        body = pkt.transport.pack(body, carrier.src, dst)
    if pkt.encap_ipv6 is not None:
        body = pkt.encap_ipv6.pack(body)
    if pkt.srh is not None:
        body = pkt.srh.pack(body)
    if pkt.outer_ipv6 is not None:
        body = pkt.outer_ipv6.pack(body)
    elif pkt.srh is not None or pkt.encap_ipv6 is not None or pkt.transport is not None:
        raise InconsistentLayers("IPv6 layers present without an outer IPv6 header")
    return pkt.eth.pack() + body + pkt.trailer


# -- builders ----------------------------------------------------------------

ICMPV6_ECHO_REQUEST = 128


def make_inner_packet(src: AddressLike, dst: AddressLike, proto: int, sport: int = 0,
                      dport: int = 0, payload: bytes = b"", hop_limit: int = 64) -> bytes:
    """A user IPv6 packet with a valid UDP, TCP or ICMPv6 echo-request header.

    For ICMPv6 the echo identifier and sequence number come from
    ``sport``/``dport``.  Other protocols carry ``payload`` directly.
    """
    src, dst = ipv6(src), ipv6(dst)
    if proto == IPPROTO_UDP:
        segment = struct.pack("!HHHH", sport, dport, UDP_LEN + len(payload), 0) + payload
        segment = segment[:6] + struct.pack("!H", compute_udp_checksum(src, dst, segment)) + segment[8:]
    elif proto == IPPROTO_TCP:
        segment = struct.pack("!HHIIBBHHH", sport, dport, 1, 0, 5 << 4, 0x18, 65535, 0, 0) + payload
        csum = l4_checksum(src, dst, proto, segment, 16)
        segment = segment[:16] + struct.pack("!H", csum) + segment[18:]
    elif proto == IPPROTO_ICMPV6:
        segment = struct.pack("!BBHHH", ICMPV6_ECHO_REQUEST, 0, 0, sport, dport) + payload
        csum = l4_checksum(src, dst, proto, segment, 2)
        segment = segment[:2] + struct.pack("!H", csum) + segment[4:]
    else:
        segment = payload
    return Ipv6Header(src, dst, proto, hop_limit).pack(segment)


def make_gtpu_packet(inner: bytes, src: AddressLike, dst: AddressLike, teid: int,
                     qfi: Optional[int] = None, sport: int = GTPU_PORT,
                     hop_limit: int = 64) -> bytes:
    """IPv6/UDP/GTP-U G-PDU around ``inner``.

    With a ``qfi`` the header carries E=1 and an uplink PDU Session
    Container; without one it is the bare 8-octet header.
    """
    exts: list[GtpuExtension] = []
    if qfi is not None:
        exts.append(PduSessionContainer(pdu_type=PDU_TYPE_UL, qfi=qfi))
    gtpu = GtpuHeader(teid=teid, e_flag=bool(exts), ext_headers=exts).pack(inner)
    src, dst = ipv6(src), ipv6(dst)
    udp = UdpHeader(sport, GTPU_PORT).pack(gtpu, src, dst)
    return Ipv6Header(src, dst, IPPROTO_UDP, hop_limit).pack(udp)


def ethernet_frame(packet: bytes, dst_mac: bytes = bytes(6), src_mac: bytes = bytes(6),
                   ethertype: int = ETH_P_IPV6) -> bytes:
    return EthernetHeader(dst_mac, src_mac, ethertype).pack() + packet


def mac_from_str(text: str) -> bytes:
    raw = bytes.fromhex(text.replace(":", "").replace("-", ""))
    if len(raw) != 6:
        raise ValueError(f"bad MAC address {text!r}")
    return raw


def mac_to_str(mac: bytes) -> str:
    return ":".join(f"{b:02x}" for b in mac)
