"""SRv6 behaviors used by the chaining function.

All functions take and return IPv6 packets (no L2 header):

* :func:`h_encaps` pushes an outer IPv6 header plus SRH in front of a
  captured packet, with the INCA return SID as the last segment.
* :func:`end_process` is the plain End behavior run by every NF.
* :func:`decap` strips the outer header and SRH at the end of a chain.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from ipaddress import IPv6Address
from typing import Sequence

from .pkt_codec import (
    IPPROTO_IPV6,
    IPPROTO_ROUTING,
    IPV6_LEN,
    SRH_ROUTING_TYPE,
    AddressLike,
    Ipv6Header,
    SrhHeader,
    ipv6,
)

DEFAULT_MTU = 9000


class Srv6Error(Exception):
    """Base class for SRv6 processing failures."""


class EmptyPath(Srv6Error):
    pass


class OversizeResult(Srv6Error):
    pass


class NotMySegment(Srv6Error):
    """Destination is not the local SID; the packet should be forwarded untouched."""


class NoMoreSegments(Srv6Error):
    pass


class HopLimitExceeded(Srv6Error):
    pass


class NotChainEnd(Srv6Error):
    pass


class WrongDestination(Srv6Error):
    pass


class NotIpv6Inner(Srv6Error):
    pass


class MissingSrh(Srv6Error):
    """The packet carries no segment routing header to act on."""


@dataclass(frozen=True)
class EncapConfig:
    outer_src: IPv6Address
    inca_sid: IPv6Address
    hop_limit_initial: int = 64
    traffic_class: int = 0

    def __post_init__(self):
        for name in ("outer_src", "inca_sid"):
            addr = ipv6(getattr(self, name))
            if int(addr) == 0:
                raise ValueError(f"{name} must be a non-zero address")
            object.__setattr__(self, name, addr)


def segment_path(chain: Sequence[AddressLike], inca_sid: AddressLike) -> list[IPv6Address]:
    """Traversal-order segment list for a chain: its NF SIDs, then the INCA return SID."""
    return [ipv6(s) for s in chain] + [ipv6(inca_sid)]


def h_encaps(inner: bytes, path: Sequence[AddressLike], cfg: EncapConfig,
             mtu: int = DEFAULT_MTU) -> bytes:
    """Encapsulate ``inner`` in IPv6 + SRH steering it along ``path``."""
    if not path:
        raise EmptyPath("segment path is empty")
    srh = SrhHeader.from_path(list(path), next_header=IPPROTO_IPV6)
    outer = Ipv6Header(src=cfg.outer_src, dst=ipv6(path[0]), next_header=IPPROTO_ROUTING,
                       hop_limit=cfg.hop_limit_initial, traffic_class=cfg.traffic_class)
    total = IPV6_LEN + srh.size + len(inner)
    if total > mtu:
        raise OversizeResult(f"encapsulated packet of {total} octets exceeds MTU {mtu}")
    return outer.pack(srh.pack(inner))


def _srh_view(packet: bytes) -> tuple[int, int]:
    """Validate the outer header + SRH; return (segments_left, last_entry)."""
    if len(packet) < IPV6_LEN + 8 or packet[0] >> 4 != 6:
        raise MissingSrh("not an IPv6 packet with a routing header")
    if packet[6] != IPPROTO_ROUTING or packet[IPV6_LEN + 2] != SRH_ROUTING_TYPE:
        raise MissingSrh("outer next header is not an SRH")
    ext_len, _, sl, last = packet[IPV6_LEN + 1:IPV6_LEN + 5]
    if ext_len != 2 * (last + 1) or sl > last or len(packet) < IPV6_LEN + 8 + 8 * ext_len:
        raise MissingSrh("segment routing header is malformed")
    return sl, last


def end_process(packet: bytes, my_sid: AddressLike) -> bytes:
    """End behavior: decrement segments left and copy the next SID into the destination."""
    my_sid = ipv6(my_sid)
    if packet[24:40] != my_sid.packed:
        raise NotMySegment(f"destination {IPv6Address(packet[24:40])} is not {my_sid}")
    sl, _ = _srh_view(packet)
    if sl == 0:
        raise NoMoreSegments(f"segments left is 0 at {my_sid}")
    hop_limit = packet[7]
    if hop_limit <= 1:
        raise HopLimitExceeded(f"hop limit {hop_limit} at {my_sid}")
    sl -= 1
    sid_at = IPV6_LEN + 8 + 16 * sl
    out = bytearray(packet)
    out[7] = hop_limit - 1
    out[IPV6_LEN + 3] = sl
    out[24:40] = packet[sid_at:sid_at + 16]
    return bytes(out)


def decap(packet: bytes, inca_sid: AddressLike) -> bytes:
    """Remove the outer IPv6 header and SRH at the chain end, returning the original packet."""
    inca_sid = ipv6(inca_sid)
    if packet[24:40] != inca_sid.packed:
        raise WrongDestination(f"destination {IPv6Address(packet[24:40])} is not {inca_sid}")
    sl, last = _srh_view(packet)
    if sl != 0:
        raise NotChainEnd(f"segments left is {sl}, chain not finished")
    if packet[IPV6_LEN] != IPPROTO_IPV6:
        raise NotIpv6Inner(f"SRH next header is {packet[IPV6_LEN]}, not IPv6")
    (plen,) = struct.unpack_from("!H", packet, 4)
    inner = packet[IPV6_LEN + 8 + 16 * (last + 1):IPV6_LEN + plen]
    if len(inner) < IPV6_LEN or inner[0] >> 4 != 6:
        raise NotIpv6Inner("encapsulated packet is not IPv6")
    return inner


def active_segment(packet: bytes) -> tuple[int, IPv6Address]:
    """(segments_left, destination) of an SRv6 packet."""
    sl, _ = _srh_view(packet)
    return sl, IPv6Address(packet[24:40])
