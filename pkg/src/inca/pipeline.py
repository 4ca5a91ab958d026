"""The INCA node: a three-port bump in the wire between RAN and UPF.

Uplink GTP-U frames arriving from the RAN are classified; matches are
SRv6-encapsulated towards their service chain, everything else goes to the
UPF untouched.  Chain traffic returning on the service side is
decapsulated and handed to the UPF.  Downlink passes straight through.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

from . import srv6
from .classifier import ChainPolicy, RuleTable, extract_key
from .pkt_codec import (
    ETH_LEN,
    ETH_P_IPV6,
    IPV6_LEN,
    CodecError,
    EthernetHeader,
    parse_frame,
)
from .srv6 import DEFAULT_MTU, EncapConfig

log = logging.getLogger(__name__)


class PortRole(str, Enum):
    RAN = "ran"
    UPF = "upf"
    SERVICE = "service"


class DropReason(str, Enum):
    NO_MORE_SEGMENTS = "NoMoreSegments"
    HOP_LIMIT = "HopLimit"
    OVERSIZE = "Oversize"
    MALFORMED = "Malformed"


@dataclass(frozen=True)
class Emit:
    port: PortRole
    frame: bytes


@dataclass(frozen=True)
class Drop:
    reason: DropReason


Verdict = Union[Emit, Drop]


class Counters:
    """Monotonic named counters: ``rx.<port>``, ``tx.<port>``, ``rule.<id>.hits``, ``drop.<reason>``."""

    def __init__(self):
        self._values: Counter[str] = Counter()

    def add(self, name: str, amount: int = 1) -> None:
        self._values[name] += amount

    def rx(self, port: str, frame: bytes) -> None:
        self._values[f"rx.{port}"] += 1
        self._values[f"rx.{port}.octets"] += len(frame)

    def tx(self, port: str, frame: bytes) -> None:
        self._values[f"tx.{port}"] += 1
        self._values[f"tx.{port}.octets"] += len(frame)

    def drop(self, reason: str) -> None:
        self._values[f"drop.{reason}"] += 1

    def hit(self, rule_id: int) -> None:
        self._values[f"rule.{rule_id}.hits"] += 1

    def discard_rule(self, rule_id: int) -> None:
        self._values.pop(f"rule.{rule_id}.hits", None)

    def __getitem__(self, name: str) -> int:
        return self._values.get(name, 0)

    def total(self, prefix: str) -> int:
        """Sum of the packet counters ``<prefix>.<x>`` (octet counters excluded)."""
        return sum(v for k, v in self._values.items()
                   if k.startswith(prefix + ".") and not k.endswith(".octets"))

    def as_dict(self) -> dict[str, int]:
        return dict(sorted(self._values.items()))

    def lines(self) -> list[str]:
        return [f"{k}={v}" for k, v in self.as_dict().items()]


@dataclass
class PipelineState:
    table: RuleTable
    cfg: EncapConfig
    counters: Counters = field(default_factory=Counters)
    mtu: int = DEFAULT_MTU
    chains: dict[str, ChainPolicy] = field(default_factory=dict)
    # port -> (src_mac, next_hop_mac); ports without an entry keep the incoming L2 header
    adjacency: dict[PortRole, tuple[bytes, bytes]] = field(default_factory=dict)


def rebuild_l2(packet: bytes, next_hop_mac: bytes, src_mac: bytes) -> bytes:
    """Frame an IPv6 packet for the next hop."""
    return EthernetHeader(next_hop_mac, src_mac, ETH_P_IPV6).pack() + packet


def _ipv6_packet(frame: bytes) -> bytes:
    """The IPv6 packet inside ``frame``, without any link padding."""
    if len(frame) < ETH_LEN + IPV6_LEN:
        return frame[ETH_LEN:]
    plen = int.from_bytes(frame[ETH_LEN + 4:ETH_LEN + 6], "big")
    return frame[ETH_LEN:ETH_LEN + IPV6_LEN + plen]


def _frame_for(state: PipelineState, port: PortRole, packet: bytes, incoming: bytes) -> bytes:
    if port in state.adjacency:
        src_mac, dst_mac = state.adjacency[port]
        return rebuild_l2(packet, dst_mac, src_mac)
    return rebuild_l2(packet, incoming[0:6], incoming[6:12])


def _forward(state: PipelineState, port: PortRole, frame: bytes) -> bytes:
    """Pass-through frames keep everything but the MAC addresses."""
    if port in state.adjacency:
        src_mac, dst_mac = state.adjacency[port]
        return dst_mac + src_mac + frame[12:]
    return frame


def _emit(state: PipelineState, port: PortRole, frame: bytes) -> Emit:
    state.counters.tx(port.value, frame)
    return Emit(port, frame)


def _drop(state: PipelineState, reason: DropReason) -> Drop:
    state.counters.drop(reason.value)
    return Drop(reason)


def _from_ran(state: PipelineState, frame: bytes) -> Verdict:
    try:
        pkt = parse_frame(frame)
    except CodecError as exc:
        log.debug("unparseable RAN frame passed through: %s", exc)
        pkt = None
    if pkt is None or pkt.gtpu is None:
        return _emit(state, PortRole.UPF, _forward(state, PortRole.UPF, frame))
    hit = state.table.lookup(extract_key(pkt, state.table.teid_to_slice))
    if hit is None:
        return _emit(state, PortRole.UPF, _forward(state, PortRole.UPF, frame))
    rule_id, chain = hit
    state.counters.hit(rule_id)
    path = srv6.segment_path(chain.segments, state.cfg.inca_sid)
    try:
        packet = srv6.h_encaps(_ipv6_packet(frame), path, state.cfg, state.mtu)
    except srv6.OversizeResult:
        return _drop(state, DropReason.OVERSIZE)
    return _emit(state, PortRole.SERVICE, _frame_for(state, PortRole.SERVICE, packet, frame))


def _from_service(state: PipelineState, frame: bytes) -> Verdict:
    if len(frame) < ETH_LEN or int.from_bytes(frame[12:14], "big") != ETH_P_IPV6:
        return _drop(state, DropReason.MALFORMED)
    try:
        original = srv6.decap(_ipv6_packet(frame), state.cfg.inca_sid)
    except (srv6.Srv6Error, IndexError) as exc:
        log.debug("service-side frame dropped: %s", exc)
        return _drop(state, DropReason.MALFORMED)
    return _emit(state, PortRole.UPF, _frame_for(state, PortRole.UPF, original, frame))


def process(state: PipelineState, in_port: PortRole, frame: bytes) -> Verdict:
    """Handle one frame; every call yields exactly one verdict and never raises."""
    frame = bytes(frame)
    state.counters.rx(in_port.value, frame)
    if in_port is PortRole.RAN:
        return _from_ran(state, frame)
    if in_port is PortRole.SERVICE:
        return _from_service(state, frame)
    return _emit(state, PortRole.RAN, _forward(state, PortRole.RAN, frame))


def new_state(inca_sid, outer_src=None, table: Optional[RuleTable] = None, **kwargs) -> PipelineState:
    """Convenience constructor; the outer source defaults to the INCA SID."""
    cfg = EncapConfig(outer_src=outer_src or inca_sid, inca_sid=inca_sid)
    return PipelineState(table=table if table is not None else RuleTable(), cfg=cfg, **kwargs)
