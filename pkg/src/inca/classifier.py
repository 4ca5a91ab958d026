"""Priority-ordered ternary match-action table.

A :class:`Rule` matches on any combination of TEID, QFI, slice ID and the
inner 5-tuple; fields left as ``None`` match anything.  The highest
priority matching rule wins and equal priorities fall back to the lowest
rule id.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from ipaddress import IPv6Address, IPv6Network
from typing import Iterable, Iterator, Mapping, Optional

from .pkt_codec import AddressLike, ParsedPacket, ipv6


class ClassifierError(Exception):
    pass


class DuplicateRuleId(ClassifierError):
    pass


class UnknownRuleId(ClassifierError):
    pass


class NotGtpTraffic(ClassifierError):
    pass


@dataclass(frozen=True)
class MatchKey:
    """Fields a rule can match.  Inner fields are ``None`` when the tunnel
    payload is not a parseable IPv6 packet."""

    teid: int
    qfi: int = 0
    slice_id: int = 0
    inner_src: Optional[IPv6Address] = None
    inner_dst: Optional[IPv6Address] = None
    inner_proto: Optional[int] = None
    inner_src_port: int = 0
    inner_dst_port: int = 0


def extract_key(pkt: ParsedPacket, teid_to_slice: Mapping[int, int]) -> MatchKey:
    if pkt.gtpu is None:
        raise NotGtpTraffic("frame carries no GTP-U layer")
    container = pkt.pdu_container
    teid = pkt.gtpu.teid
    key = MatchKey(teid=teid, qfi=container.qfi if container else 0,
                   slice_id=teid_to_slice.get(teid, 0))
    inner = pkt.inner
    if inner is None:
        return key
    sport, dport = inner.ports
    return MatchKey(key.teid, key.qfi, key.slice_id, inner.ipv6.src, inner.ipv6.dst,
                    inner.l4_proto, sport, dport)


def _check(name: str, value: Optional[int], bits: int) -> None:
    if value is not None and not 0 <= value < (1 << bits):
        raise ValueError(f"{name}={value} does not fit in {bits} bits")


@dataclass(frozen=True)
class Match:
    """One optional constraint per key field; addresses match by prefix."""

    teid: Optional[int] = None
    qfi: Optional[int] = None
    slice_id: Optional[int] = None
    src: Optional[IPv6Network] = None
    dst: Optional[IPv6Network] = None
    proto: Optional[int] = None
    sport: Optional[int] = None
    dport: Optional[int] = None
    _masks: tuple = field(init=False, repr=False, compare=False, default=())

    def __post_init__(self):
        _check("teid", self.teid, 32)
        _check("qfi", self.qfi, 6)
        _check("slice", self.slice_id, 16)
        _check("proto", self.proto, 8)
        _check("sport", self.sport, 16)
        _check("dport", self.dport, 16)
        masks = []
        for name in ("src", "dst"):
            net = getattr(self, name)
            if net is not None:
                net = net if isinstance(net, IPv6Network) else IPv6Network(net)
                object.__setattr__(self, name, net)
                masks.append((int(net.netmask), int(net.network_address)))
            else:
                masks.append(None)
        object.__setattr__(self, "_masks", tuple(masks))

    def matches(self, key: MatchKey) -> bool:
        if self.teid is not None and self.teid != key.teid:
            return False
        if self.qfi is not None and self.qfi != key.qfi:
            return False
        if self.slice_id is not None and self.slice_id != key.slice_id:
            return False
        if self.proto is not None and self.proto != key.inner_proto:
            return False
        if self.sport is not None and (key.inner_proto is None or self.sport != key.inner_src_port):
            return False
        if self.dport is not None and (key.inner_proto is None or self.dport != key.inner_dst_port):
            return False
        for mask, addr in zip(self._masks, (key.inner_src, key.inner_dst)):
            if mask is not None and (addr is None or int(addr) & mask[0] != mask[1]):
                return False
        return True


@dataclass(frozen=True)
class ChainPolicy:
    chain_name: str
    segments: tuple[IPv6Address, ...]

    def __post_init__(self):
        segs = tuple(ipv6(s) for s in self.segments)
        if not segs:
            raise ValueError(f"chain {self.chain_name!r} has no segments")
        if any(a == b for a, b in zip(segs, segs[1:])):
            raise ValueError(f"chain {self.chain_name!r} repeats a SID consecutively")
        object.__setattr__(self, "segments", segs)

    @classmethod
    def of(cls, name: str, sids: Iterable[AddressLike]) -> ChainPolicy:
        return cls(name, tuple(ipv6(s) for s in sids))


@dataclass(frozen=True)
class Rule:
    rule_id: int
    priority: int
    match: Match
    action: ChainPolicy

    def __post_init__(self):
        if self.rule_id <= 0:
            raise ValueError(f"rule id must be positive, got {self.rule_id}")

    @property
    def order(self) -> tuple[int, int]:
        return (-self.priority, self.rule_id)


class RuleTable:
    """Rules kept sorted by (priority desc, rule id asc); first match wins."""

    def __init__(self, rules: Iterable[Rule] = (),
                 teid_to_slice: Optional[Mapping[int, int]] = None):
        self._rules: list[Rule] = []
        self._by_id: dict[int, Rule] = {}
        self.teid_to_slice: dict[int, int] = dict(teid_to_slice or {})
        for rule in rules:
            self.add_rule(rule)

    def add_rule(self, rule: Rule) -> None:
        if rule.rule_id in self._by_id:
            raise DuplicateRuleId(f"rule {rule.rule_id} already installed")
        bisect.insort(self._rules, rule, key=lambda r: r.order)
        self._by_id[rule.rule_id] = rule

    def remove_rule(self, rule_id: int) -> Rule:
        rule = self._by_id.pop(rule_id, None)
        if rule is None:
            raise UnknownRuleId(f"no rule {rule_id}")
        self._rules.remove(rule)
        return rule

    def replace_rule(self, rule: Rule) -> None:
        self.remove_rule(rule.rule_id)
        self.add_rule(rule)

    def get(self, rule_id: int) -> Optional[Rule]:
        return self._by_id.get(rule_id)

    def lookup(self, key: MatchKey) -> Optional[tuple[int, ChainPolicy]]:
        for rule in self._rules:
            if rule.match.matches(key):
                return rule.rule_id, rule.action
        return None

    def copy(self) -> RuleTable:
        return RuleTable(self._rules, self.teid_to_slice)

    def __iter__(self) -> Iterator[Rule]:
        return iter(self._rules)

    def __len__(self) -> int:
        return len(self._rules)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RuleTable):
            return NotImplemented
        return self._rules == other._rules and self.teid_to_slice == other.teid_to_slice

    def __repr__(self) -> str:
        return f"RuleTable({len(self)} rules, {len(self.teid_to_slice)} slice mappings)"


def lookup(table: RuleTable, key: MatchKey) -> Optional[tuple[int, ChainPolicy]]:
    return table.lookup(key)
