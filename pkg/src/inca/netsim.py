"""Deterministic in-memory topology simulator.

Nodes exchange Ethernet frames over point-to-point links with a fixed
latency on a single virtual clock.  Node kinds:

``ue``    originates user packets and routes them on destination.
``ran``   GTP-U encapsulates uplink user packets towards the UPF.
``inca``  runs :mod:`inca.pipeline`; its service-side links are joined by
          an embedded switch, so chain traffic between two NFs crosses INCA
          at L2 without entering the pipeline.
``nf``    SR-aware endpoint: End processing, then a tap/pass/drop behavior.
``upf``   GTP-U decapsulates and routes the inner packet.
``dn``    destination network host.

Every frame put on a link is captured with its virtual timestamp, and
every injected packet is followed through the topology to exactly one
delivery or one drop.
"""

from __future__ import annotations

import heapq
import itertools
import json
import logging
import os
import zlib
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from ipaddress import IPv6Address, IPv6Network
from typing import Any, Optional, Union

from . import srv6
from .classifier import RuleTable
from .ctrl import load_rules_file
from .pcap import CaptureRecord, write_pcap
from .pipeline import Counters, Drop, PipelineState, PortRole, process
from .pkt_codec import (
    ETH_LEN,
    ETH_P_IPV6,
    GTPU_PORT,
    IPV6_LEN,
    CodecError,
    ParsedPacket,
    ethernet_frame,
    make_gtpu_packet,
    make_inner_packet,
    mac_from_str,
    parse_frame,
)
from .srv6 import EncapConfig

log = logging.getLogger(__name__)

DEFAULT_LATENCY_US = 1
MAX_HOPS = 64
EPHEMERAL_BASE = 49152


class TopologyError(ValueError):
    pass


class SchemaError(TopologyError):
    pass


class UnknownNodeReference(TopologyError):
    pass


class DuplicateSid(TopologyError):
    pass


class MissingTunnelConfig(Exception):
    pass


class NotGtp(Exception):
    pass


class WrongDestination(Exception):
    pass


class NodeKind(str, Enum):
    UE = "ue"
    RAN = "ran"
    INCA = "inca"
    NF = "nf"
    UPF = "upf"
    DN = "dn"


@dataclass(frozen=True)
class Tap:
    """Forward everything and keep a copy (IDS stand-in)."""


@dataclass(frozen=True)
class Pass:
    """Forward everything (IPS stand-in)."""


@dataclass(frozen=True)
class DropMatching:
    """Drop packets whose innermost protocol is ``inner_proto`` (packet filter)."""

    inner_proto: int


NfBehavior = Union[Tap, Pass, DropMatching]


@dataclass(frozen=True)
class Route:
    prefix: IPv6Network
    via: str


@dataclass(frozen=True)
class TunnelSpec:
    """Per traffic-class GTP-U mapping at a RAN node; ``proto=None`` is the default."""

    teid: int
    qfi: Optional[int] = None
    proto: Optional[int] = None


@dataclass
class NodeSpec:
    name: str
    kind: NodeKind
    addresses: list[IPv6Address] = field(default_factory=list)
    sid: Optional[IPv6Address] = None
    behavior: Optional[NfBehavior] = None
    tunnels: list[TunnelSpec] = field(default_factory=list)
    upf_addr: Optional[IPv6Address] = None
    routes: list[Route] = field(default_factory=list)
    ports: dict[str, str] = field(default_factory=dict)  # inca only: "ran"/"upf" -> neighbor

    def owns(self, addr: IPv6Address) -> bool:
        return addr in self.addresses or addr == self.sid


@dataclass(frozen=True)
class Link:
    a: str
    b: str
    mac_a: bytes
    mac_b: bytes

    @property
    def name(self) -> str:
        return f"{self.a}-{self.b}"

    def mac_of(self, node: str) -> bytes:
        return self.mac_a if node == self.a else self.mac_b

    def peer(self, node: str) -> str:
        return self.b if node == self.a else self.a


@dataclass
class Topology:
    nodes: dict[str, NodeSpec]
    links: list[Link]

    def __post_init__(self):
        self._adj: dict[str, dict[str, Link]] = {n: {} for n in self.nodes}
        for link in self.links:
            self._adj[link.a][link.b] = link
            self._adj[link.b][link.a] = link

    def neighbors(self, node: str) -> dict[str, Link]:
        return self._adj[node]

    def link(self, a: str, b: str) -> Link:
        return self._adj[a][b]

    def of_kind(self, kind: NodeKind) -> list[NodeSpec]:
        return [n for n in self.nodes.values() if n.kind is kind]


# -- topology loading --------------------------------------------------------

_NODE_KEYS = {"name", "kind", "addresses", "sid", "behavior", "teid", "qfi", "tunnels",
              "upf", "routes", "ports"}
_KIND_ONLY = {"sid": {NodeKind.NF, NodeKind.INCA}, "behavior": {NodeKind.NF},
              "teid": {NodeKind.RAN}, "qfi": {NodeKind.RAN}, "tunnels": {NodeKind.RAN},
              "upf": {NodeKind.RAN}, "ports": {NodeKind.INCA}}


def _addr(value: Any, path: str) -> IPv6Address:
    try:
        return IPv6Address(value)
    except (ValueError, TypeError):
        raise SchemaError(f"{path}: {value!r} is not an IPv6 address") from None


def _int(value: Any, path: str, bits: int) -> int:
    if not isinstance(value, int) or isinstance(value, bool) or not 0 <= value < 1 << bits:
        raise SchemaError(f"{path}: expected an unsigned {bits}-bit integer, got {value!r}")
    return value


def _behavior(value: Any, path: str) -> NfBehavior:
    if value == "tap":
        return Tap()
    if value == "pass":
        return Pass()
    if isinstance(value, dict) and set(value) == {"drop_proto"}:
        return DropMatching(_int(value["drop_proto"], f"{path}.drop_proto", 8))
    raise SchemaError(f"{path}: expected \"tap\", \"pass\" or {{\"drop_proto\": N}}, got {value!r}")


def _node(doc: Any, path: str) -> NodeSpec:
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: expected an object")
    extra = set(doc) - _NODE_KEYS
    if extra:
        raise SchemaError(f"{path}: unknown keys {sorted(extra)}")
    for key in ("name", "kind"):
        if key not in doc:
            raise SchemaError(f"{path}: missing {key!r}")
    name = doc["name"]
    if not isinstance(name, str) or not name:
        raise SchemaError(f"{path}.name: expected a non-empty string")
    try:
        kind = NodeKind(doc["kind"])
    except ValueError:
        raise SchemaError(f"{path}.kind: unknown kind {doc['kind']!r}") from None
    for key, kinds in _KIND_ONLY.items():
        if key in doc and kind not in kinds:
            raise SchemaError(f"{path}.{key}: not allowed on a {kind.value} node")
    addresses = doc.get("addresses", [])
    if not isinstance(addresses, list):
        raise SchemaError(f"{path}.addresses: expected an array")
    node = NodeSpec(name=name, kind=kind,
                    addresses=[_addr(a, f"{path}.addresses[{i}]") for i, a in enumerate(addresses)])
    if kind in (NodeKind.NF, NodeKind.INCA):
        if "sid" not in doc:
            raise SchemaError(f"{path}: a {kind.value} node needs a sid")
        node.sid = _addr(doc["sid"], f"{path}.sid")
    if kind is NodeKind.NF:
        if "behavior" not in doc:
            raise SchemaError(f"{path}: an nf node needs a behavior")
        node.behavior = _behavior(doc["behavior"], f"{path}.behavior")
    if kind is NodeKind.RAN:
        for i, t in enumerate(doc.get("tunnels", [])):
            tpath = f"{path}.tunnels[{i}]"
            if not isinstance(t, dict) or "teid" not in t or set(t) - {"teid", "qfi", "proto"}:
                raise SchemaError(f"{tpath}: expected {{teid, qfi?, proto?}}")
            node.tunnels.append(TunnelSpec(
                _int(t["teid"], f"{tpath}.teid", 32),
                _int(t["qfi"], f"{tpath}.qfi", 6) if "qfi" in t else None,
                _int(t["proto"], f"{tpath}.proto", 8) if "proto" in t else None))
        # node-level teid/qfi is the fallback for traffic no tunnel entry claims
        if "teid" in doc:
            qfi = _int(doc["qfi"], f"{path}.qfi", 6) if "qfi" in doc else None
            node.tunnels.append(TunnelSpec(_int(doc["teid"], f"{path}.teid", 32), qfi))
        elif "qfi" in doc:
            raise SchemaError(f"{path}.qfi: given without a teid")
        if "upf" in doc:
            node.upf_addr = _addr(doc["upf"], f"{path}.upf")
    if kind is NodeKind.INCA and "ports" in doc:
        ports = doc["ports"]
        if not isinstance(ports, dict) or set(ports) - {"ran", "upf"}:
            raise SchemaError(f"{path}.ports: expected {{ran?, upf?}}")
        node.ports = dict(ports)
    for i, r in enumerate(doc.get("routes", [])):
        rpath = f"{path}.routes[{i}]"
        if not isinstance(r, dict) or set(r) != {"prefix", "len", "via"}:
            raise SchemaError(f"{rpath}: expected {{prefix, len, via}}")
        plen = _int(r["len"], f"{rpath}.len", 8)
        if plen > 128:
            raise SchemaError(f"{rpath}.len: {plen} exceeds 128")
        try:
            prefix = IPv6Network(f"{r['prefix']}/{plen}", strict=False)
        except ValueError:
            raise SchemaError(f"{rpath}.prefix: {r['prefix']!r} is not an IPv6 prefix") from None
        node.routes.append(Route(prefix, r["via"]))
    return node


def load_topology(doc: Union[str, dict]) -> Topology:
    """Build a validated :class:`Topology` from its JSON text or decoded document."""
    if isinstance(doc, str):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"$: invalid JSON: {exc}") from None
    if not isinstance(doc, dict) or set(doc) - {"nodes", "links"} or "nodes" not in doc:
        raise SchemaError("$: expected an object with 'nodes' and 'links'")
    if not isinstance(doc["nodes"], list) or not isinstance(doc.get("links", []), list):
        raise SchemaError("$: 'nodes' and 'links' must be arrays")
    nodes: dict[str, NodeSpec] = {}
    for i, nd in enumerate(doc["nodes"]):
        node = _node(nd, f"nodes[{i}]")
        if node.name in nodes:
            raise SchemaError(f"nodes[{i}].name: duplicate node {node.name!r}")
        nodes[node.name] = node

    sids: dict[IPv6Address, str] = {}
    for node in nodes.values():
        if node.sid is not None:
            if node.sid in sids:
                raise DuplicateSid(f"{node.name}.sid: {node.sid} already used by {sids[node.sid]}")
            sids[node.sid] = node.name

    links = []
    pairs = set()
    for i, ld in enumerate(doc.get("links", [])):
        path = f"links[{i}]"
        if not isinstance(ld, dict) or set(ld) != {"a", "b", "mac_a", "mac_b"}:
            raise SchemaError(f"{path}: expected {{a, b, mac_a, mac_b}}")
        for end in ("a", "b"):
            if ld[end] not in nodes:
                raise UnknownNodeReference(f"{path}.{end}: unknown node {ld[end]!r}")
        if ld["a"] == ld["b"] or frozenset((ld["a"], ld["b"])) in pairs:
            raise SchemaError(f"{path}: self loop or duplicate link {ld['a']}-{ld['b']}")
        pairs.add(frozenset((ld["a"], ld["b"])))
        try:
            macs = mac_from_str(ld["mac_a"]), mac_from_str(ld["mac_b"])
        except (ValueError, AttributeError):
            raise SchemaError(f"{path}: bad MAC address") from None
        links.append(Link(ld["a"], ld["b"], *macs))
    topo = Topology(nodes, links)

    for i, node in enumerate(nodes.values()):
        for j, route in enumerate(node.routes):
            where = f"nodes[{i}].routes[{j}].via"
            if route.via not in nodes:
                raise UnknownNodeReference(f"{where}: unknown node {route.via!r}")
            if route.via not in topo.neighbors(node.name):
                raise SchemaError(f"{where}: {route.via!r} is not adjacent to {node.name!r}")
        if node.kind is NodeKind.INCA:
            _resolve_inca_ports(topo, node, f"nodes[{i}]")
        if node.kind is NodeKind.RAN and node.upf_addr is None:
            upfs = [u for u in topo.of_kind(NodeKind.UPF) if u.addresses]
            if len(upfs) == 1:
                node.upf_addr = upfs[0].addresses[0]

    if nodes:
        seen, todo = set(), [next(iter(nodes))]
        while todo:
            n = todo.pop()
            if n not in seen:
                seen.add(n)
                todo.extend(topo.neighbors(n))
        if len(seen) != len(nodes):
            raise SchemaError(f"$: topology is not connected ({sorted(set(nodes) - seen)} unreachable)")
    return topo


def _resolve_inca_ports(topo: Topology, node: NodeSpec, path: str) -> None:
    for role, kind in (("ran", NodeKind.RAN), ("upf", NodeKind.UPF)):
        if role in node.ports:
            peer = node.ports[role]
            if peer not in topo.nodes:
                raise UnknownNodeReference(f"{path}.ports.{role}: unknown node {peer!r}")
            if peer not in topo.neighbors(node.name):
                raise SchemaError(f"{path}.ports.{role}: {peer!r} is not adjacent")
            continue
        candidates = [n for n in topo.neighbors(node.name) if topo.nodes[n].kind is kind]
        if len(candidates) != 1:
            raise SchemaError(f"{path}.ports.{role}: cannot infer the {role}-facing neighbor")
        node.ports[role] = candidates[0]
    if node.ports["ran"] == node.ports["upf"]:
        raise SchemaError(f"{path}.ports: ran and upf must be different neighbors")


# -- tunnel endpoints --------------------------------------------------------

def _tunnel_for(node: NodeSpec, proto: int) -> TunnelSpec:
    for t in node.tunnels:
        if t.proto is None or t.proto == proto:
            return t
    raise MissingTunnelConfig(f"{node.name}: no GTP-U tunnel configured for protocol {proto}")


def ran_encapsulate(node: NodeSpec, inner: bytes) -> bytes:
    """GTP-U encapsulate an uplink user packet from the RAN towards the UPF."""
    if node.kind is not NodeKind.RAN:
        raise MissingTunnelConfig(f"{node.name} is not a RAN node")
    if node.upf_addr is None or not node.addresses:
        raise MissingTunnelConfig(f"{node.name}: no RAN or UPF address for the tunnel")
    tunnel = _tunnel_for(node, inner[6])
    # deterministic per-flow source port: addresses, protocol and first L4 word
    sport = EPHEMERAL_BASE + zlib.crc32(inner[8:40] + inner[6:7] + inner[40:44]) % 16384
    return make_gtpu_packet(inner, node.addresses[0], node.upf_addr, tunnel.teid,
                            qfi=tunnel.qfi, sport=sport)


def upf_decapsulate(node: NodeSpec, frame: bytes) -> bytes:
    """Strip Ethernet/IPv6/UDP/GTP-U from a frame addressed to the UPF; returns the user packet."""
    try:
        pkt = parse_frame(frame)
    except CodecError as exc:
        raise NotGtp(str(exc)) from None
    if pkt.gtpu is None or pkt.srh is not None or pkt.encap_ipv6 is not None:
        raise NotGtp("frame is not plain IPv6/UDP/GTP-U")
    if pkt.outer_ipv6.dst not in node.addresses:
        raise WrongDestination(f"{pkt.outer_ipv6.dst} is not an address of {node.name}")
    start = pkt.layer_offsets["gtpu"] + pkt.gtpu.header_size
    end = ETH_LEN + IPV6_LEN + pkt.outer_ipv6.payload_length
    return frame[start:end]


def innermost_proto(pkt: ParsedPacket) -> Optional[int]:
    if pkt.inner is not None:
        return pkt.inner.l4_proto
    if pkt.transport is not None:
        return 17
    if pkt.encap_ipv6 is not None:
        return pkt.encap_ipv6.next_header
    if pkt.srh is not None:
        return pkt.srh.next_header
    return pkt.outer_ipv6.next_header if pkt.outer_ipv6 else None


# -- scenarios ---------------------------------------------------------------

@dataclass(frozen=True)
class GenSpec:
    src: IPv6Address
    dst: IPv6Address
    proto: int
    sport: int = 0
    dport: int = 0
    payload_len: int = 0
    count: int = 1
    gap_us: int = 1


@dataclass(frozen=True)
class Injection:
    at_node: str
    name: str
    gen: Optional[GenSpec] = None
    raw: Optional[bytes] = None

    def packets(self) -> list[tuple[int, bytes]]:
        """(offset in µs, IPv6 packet) for every frame of this injection."""
        if self.raw is not None:
            return [(0, self.raw)]
        g = self.gen
        out = []
        for k in range(g.count):
            payload = bytes((k + j) & 0xFF for j in range(g.payload_len))
            out.append((k * g.gap_us, make_inner_packet(g.src, g.dst, g.proto, g.sport, g.dport, payload)))
        return out


def load_scenario(doc: Union[str, dict], topology: Optional[Topology] = None) -> list[Injection]:
    if isinstance(doc, str):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"$: invalid JSON: {exc}") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("injections"), list):
        raise SchemaError("$: expected an object with an 'injections' array")
    out = []
    for i, inj in enumerate(doc["injections"]):
        path = f"injections[{i}]"
        if not isinstance(inj, dict) or "at" not in inj or ("gen" in inj) == ("raw_hex" in inj):
            raise SchemaError(f"{path}: needs 'at' and exactly one of 'gen' or 'raw_hex'")
        if set(inj) - {"at", "gen", "raw_hex", "name"}:
            raise SchemaError(f"{path}: unknown keys {sorted(set(inj) - {'at', 'gen', 'raw_hex', 'name'})}")
        if topology is not None and inj["at"] not in topology.nodes:
            raise UnknownNodeReference(f"{path}.at: unknown node {inj['at']!r}")
        name = inj.get("name", f"flow{i}")
        if "raw_hex" in inj:
            try:
                raw = bytes.fromhex(inj["raw_hex"])
            except (ValueError, TypeError):
                raise SchemaError(f"{path}.raw_hex: not a hex string") from None
            if len(raw) < IPV6_LEN or raw[0] >> 4 != 6:
                raise SchemaError(f"{path}.raw_hex: not an IPv6 packet")
            out.append(Injection(inj["at"], name, raw=raw))
            continue
        g = inj["gen"]
        gpath = f"{path}.gen"
        if not isinstance(g, dict) or not {"src", "dst", "proto"} <= set(g) or set(g) - {
                "src", "dst", "proto", "sport", "dport", "payload_len", "count", "gap_us"}:
            raise SchemaError(f"{gpath}: expected {{src, dst, proto, sport?, dport?, payload_len?, count?, gap_us?}}")
        spec = GenSpec(_addr(g["src"], f"{gpath}.src"), _addr(g["dst"], f"{gpath}.dst"),
                       _int(g["proto"], f"{gpath}.proto", 8),
                       _int(g.get("sport", 0), f"{gpath}.sport", 16),
                       _int(g.get("dport", 0), f"{gpath}.dport", 16),
                       _int(g.get("payload_len", 0), f"{gpath}.payload_len", 16),
                       _int(g.get("count", 1), f"{gpath}.count", 32),
                       _int(g.get("gap_us", 1), f"{gpath}.gap_us", 32))
        if spec.payload_len > 9000:
            raise SchemaError(f"{gpath}.payload_len: {spec.payload_len} exceeds 9000")
        out.append(Injection(inj["at"], name, gen=spec))
    return out


# -- simulation --------------------------------------------------------------

@dataclass
class FrameTrace:
    fid: int
    flow: int
    emitted: bytes
    traversal: list[str] = field(default_factory=list)
    delivered_at: Optional[str] = None
    delivered: Optional[bytes] = None
    dropped_at: Optional[str] = None
    drop_reason: Optional[str] = None


@dataclass(frozen=True)
class LinkEvent:
    t_us: int
    sender: str
    receiver: str
    frame: bytes


@dataclass
class FlowReport:
    name: str
    frames: int
    traversal: list[str]
    distinct_traversals: int
    delivered: int
    dropped: int
    dropped_at: list[str]

    def to_dict(self) -> dict:
        return {"name": self.name, "frames": self.frames, "traversal": self.traversal,
                "distinct_traversals": self.distinct_traversals, "delivered": self.delivered,
                "dropped": self.dropped, "dropped_at": self.dropped_at}


@dataclass
class ScenarioReport:
    flows: list[FlowReport]
    counters: dict[str, int]
    drops: dict[str, int]
    link_log: dict[str, list[LinkEvent]]
    taps: dict[str, list[CaptureRecord]]
    delivered: dict[str, list[bytes]]
    frames: list[FrameTrace]

    def captures(self) -> dict[str, list[CaptureRecord]]:
        return {name: [CaptureRecord.at_us(e.t_us, e.frame) for e in events]
                for name, events in self.link_log.items()}

    def egress(self, link: str, sender: str) -> list[bytes]:
        """Frames ``sender`` transmitted on ``link``, in order."""
        return [e.frame for e in self.link_log[link] if e.sender == sender]

    def to_dict(self) -> dict:
        return {"flows": [f.to_dict() for f in self.flows], "counters": self.counters,
                "drops": self.drops}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def pcap_files(self) -> dict[str, bytes]:
        files = {f"{name}.pcap": write_pcap(recs) for name, recs in self.captures().items()}
        files.update({f"tap-{nf}.pcap": write_pcap(recs) for nf, recs in self.taps.items()})
        return files

    def write_captures(self, directory: str) -> list[str]:
        os.makedirs(directory, exist_ok=True)
        written = []
        for fname, data in sorted(self.pcap_files().items()):
            path = os.path.join(directory, fname)
            with open(path, "wb") as fh:
                fh.write(data)
            written.append(path)
        return written


class Simulator:
    """Event-driven run over one topology.  Injections are consumed one step at a time."""

    def __init__(self, topology: Topology, rules_text: str = "",
                 injections: Optional[list[Injection]] = None,
                 latency_us: int = DEFAULT_LATENCY_US):
        self.topo = topology
        self.latency = latency_us
        self.injections = list(injections or [])
        self.next_step = 0
        self.now = 0
        self._queue: list = []
        self._seq = itertools.count()
        self._fids = itertools.count()
        self.frames: list[FrameTrace] = []
        self.link_log: dict[str, list[LinkEvent]] = {l.name: [] for l in topology.links}
        self.taps: dict[str, list[CaptureRecord]] = {
            n.name: [] for n in topology.of_kind(NodeKind.NF) if isinstance(n.behavior, Tap)}
        self.delivered: dict[str, list[bytes]] = {}
        self.counters: dict[str, Counters] = {n: Counters() for n in topology.nodes}
        self.pipelines: dict[str, PipelineState] = {}
        rules = load_rules_file(rules_text)
        for node in topology.of_kind(NodeKind.INCA):
            src = node.addresses[0] if node.addresses else node.sid
            state = PipelineState(table=RuleTable(), cfg=EncapConfig(outer_src=src, inca_sid=node.sid),
                                  counters=self.counters[node.name])
            rules.install(state)
            self.pipelines[node.name] = state
        self._routes = {name: self._route_table(node) for name, node in topology.nodes.items()}

    # routing

    def _route_table(self, node: NodeSpec) -> list[tuple[int, int, int, str]]:
        entries = [(r.prefix.prefixlen, int(r.prefix.netmask), int(r.prefix.network_address), r.via)
                   for r in node.routes]
        for peer in self.topo.neighbors(node.name):
            spec = self.topo.nodes[peer]
            for addr in spec.addresses + ([spec.sid] if spec.sid else []):
                entries.append((128, (1 << 128) - 1, int(addr), peer))
        # longest prefix first; stable order keeps ties deterministic
        entries.sort(key=lambda e: -e[0])
        return entries

    def next_hop(self, node: str, dst: IPv6Address) -> Optional[str]:
        d = int(dst)
        for _, mask, net, via in self._routes[node]:
            if d & mask == net:
                return via
        return None

    @property
    def inca(self) -> Optional[PipelineState]:
        return next(iter(self.pipelines.values()), None)

    # event plumbing

    def _send(self, sender: str, receiver: str, frame: bytes, fid: int) -> None:
        link = self.topo.link(sender, receiver)
        frame = link.mac_of(receiver) + link.mac_of(sender) + frame[12:]
        self.link_log[link.name].append(LinkEvent(self.now, sender, receiver, frame))
        if sender not in self.pipelines:  # INCA counters belong to its pipeline
            self.counters[sender].tx(receiver, frame)
        heapq.heappush(self._queue, (self.now + self.latency, next(self._seq), "rx",
                                     receiver, sender, frame, fid))

    def _route_out(self, node: str, packet: bytes, fid: int) -> None:
        via = self.next_hop(node, IPv6Address(packet[24:40]))
        if via is None:
            self._drop(node, "NoRoute", fid)
            return
        self._send(node, via, ethernet_frame(packet), fid)

    def _deliver(self, node: str, packet: bytes, fid: int) -> None:
        self.delivered.setdefault(node, []).append(packet)
        self.counters[node].add("delivered")
        trace = self.frames[fid]
        trace.delivered_at, trace.delivered = node, packet

    def _drop(self, node: str, reason: str, fid: int) -> None:
        self.counters[node].drop(reason)
        trace = self.frames[fid]
        trace.dropped_at, trace.drop_reason = node, reason

    # steps

    @property
    def done(self) -> bool:
        return self.next_step >= len(self.injections)

    def step(self, count: int = 1) -> int:
        """Run the next ``count`` injections, each to quiescence; returns steps run."""
        ran = 0
        while ran < count and not self.done:
            inj = self.injections[self.next_step]
            if inj.at_node not in self.topo.nodes:
                raise UnknownNodeReference(f"injection at unknown node {inj.at_node!r}")
            start = self.now
            for offset, packet in inj.packets():
                fid = next(self._fids)
                self.frames.append(FrameTrace(fid, self.next_step, packet))
                heapq.heappush(self._queue, (start + offset, next(self._seq), "originate",
                                             inj.at_node, None, packet, fid))
            self.next_step += 1
            self._drain()
            ran += 1
        return ran

    def run(self) -> ScenarioReport:
        self.step(len(self.injections))
        return self.report()

    def _drain(self) -> None:
        while self._queue:
            t, _, kind, node, sender, data, fid = heapq.heappop(self._queue)
            self.now = t
            if kind == "originate":
                self.frames[fid].traversal.append(node)
                self._originate(node, data, fid)
            else:
                self._receive(node, sender, data, fid)

    def _originate(self, node: str, packet: bytes, fid: int) -> None:
        self.counters[node].add("originated")
        spec = self.topo.nodes[node]
        if spec.kind is NodeKind.RAN and not _is_gtpu(packet):
            packet = self._ran_uplink(spec, packet, fid)
            if packet is None:
                return
        self._route_out(node, packet, fid)

    # node behaviors

    def _receive(self, node: str, sender: str, frame: bytes, fid: int) -> None:
        spec = self.topo.nodes[node]
        trace = self.frames[fid]
        fabric = spec.kind is NodeKind.INCA and self._fabric_target(spec, sender, frame)
        if fabric:
            self.counters[node].add("fabric")
            self._send(node, fabric, frame, fid)
            return
        trace.traversal.append(node)
        if spec.kind is NodeKind.INCA:
            self._inca(spec, sender, frame, fid)
            return
        self.counters[node].rx(sender, frame)
        if len(trace.traversal) > MAX_HOPS:
            self._drop(node, "Loop", fid)
            return
        if len(frame) < ETH_LEN + IPV6_LEN or int.from_bytes(frame[12:14], "big") != ETH_P_IPV6:
            self._drop(node, "NotIpv6", fid)
            return
        plen = int.from_bytes(frame[ETH_LEN + 4:ETH_LEN + 6], "big")
        packet = frame[ETH_LEN:ETH_LEN + IPV6_LEN + plen]
        if spec.kind is NodeKind.NF:
            self._nf(spec, frame, packet, fid)
        elif spec.kind is NodeKind.UPF:
            self._upf(spec, frame, packet, fid)
        elif spec.kind is NodeKind.RAN and not _is_gtpu(packet) and not spec.owns(IPv6Address(packet[24:40])):
            out = self._ran_uplink(spec, packet, fid)
            if out is not None:
                self._route_out(node, out, fid)
        else:
            self._host(spec, packet, fid)

    def _host(self, spec: NodeSpec, packet: bytes, fid: int) -> None:
        if spec.owns(IPv6Address(packet[24:40])):
            self._deliver(spec.name, packet, fid)
        else:
            self._route_out(spec.name, packet, fid)

    def _ran_uplink(self, spec: NodeSpec, packet: bytes, fid: int) -> Optional[bytes]:
        try:
            return ran_encapsulate(spec, packet)
        except (MissingTunnelConfig, CodecError) as exc:
            log.debug("%s: %s", spec.name, exc)
            self._drop(spec.name, "MissingTunnelConfig", fid)
            return None

    def _upf(self, spec: NodeSpec, frame: bytes, packet: bytes, fid: int) -> None:
        if spec.owns(IPv6Address(packet[24:40])) and _is_gtpu(packet):
            try:
                inner = upf_decapsulate(spec, frame)
            except (NotGtp, WrongDestination) as exc:
                log.debug("%s: %s", spec.name, exc)
                self._drop(spec.name, "NotGtp", fid)
                return
            self.counters[spec.name].add("decapsulated")
            self._host(spec, inner, fid)
            return
        self._host(spec, packet, fid)

    def _nf(self, spec: NodeSpec, frame: bytes, packet: bytes, fid: int) -> None:
        name = spec.name
        try:
            packet = srv6.end_process(packet, spec.sid)
        except (srv6.NotMySegment, srv6.MissingSrh):
            self._host(spec, packet, fid)
            return
        except srv6.NoMoreSegments:
            self._drop(name, "NoMoreSegments", fid)
            return
        except srv6.HopLimitExceeded:
            self._drop(name, "HopLimit", fid)
            return
        behavior = spec.behavior
        if isinstance(behavior, Tap):
            self.taps[name].append(CaptureRecord.at_us(self.now, frame))
        elif isinstance(behavior, DropMatching):
            try:
                proto = innermost_proto(parse_frame(frame[:ETH_LEN] + packet))
            except CodecError:
                proto = None
            if proto == behavior.inner_proto:
                self._drop(name, "Filtered", fid)
                return
        self._route_out(name, packet, fid)

    def _fabric_target(self, spec: NodeSpec, sender: str, frame: bytes) -> Optional[str]:
        """Service-side neighbor an NF-to-NF frame is switched to, if any."""
        service = self._service_neighbors(spec)
        if sender not in service or len(frame) < ETH_LEN + IPV6_LEN:
            return None
        dst = IPv6Address(frame[ETH_LEN + 24:ETH_LEN + 40])
        if dst == spec.sid or spec.owns(dst):
            return None
        via = self.next_hop(spec.name, dst)
        return via if via in service and via != sender else None

    def _service_neighbors(self, spec: NodeSpec) -> set[str]:
        return set(self.topo.neighbors(spec.name)) - {spec.ports["ran"], spec.ports["upf"]}

    def _inca(self, spec: NodeSpec, sender: str, frame: bytes, fid: int) -> None:
        if sender == spec.ports["ran"]:
            port = PortRole.RAN
        elif sender == spec.ports["upf"]:
            port = PortRole.UPF
        else:
            port = PortRole.SERVICE
        verdict = process(self.pipelines[spec.name], port, frame)
        if isinstance(verdict, Drop):
            self.frames[fid].dropped_at = spec.name
            self.frames[fid].drop_reason = verdict.reason.value
            return
        if verdict.port is PortRole.SERVICE:
            dst = IPv6Address(verdict.frame[ETH_LEN + 24:ETH_LEN + 40])
            via = self.next_hop(spec.name, dst)
            if via not in self._service_neighbors(spec):
                self._drop(spec.name, "NoRoute", fid)
                return
        else:
            via = spec.ports[verdict.port.value]
        self._send(spec.name, via, verdict.frame, fid)

    # reporting

    def report(self) -> ScenarioReport:
        flows = []
        for i, inj in enumerate(self.injections[:self.next_step]):
            traces = [f for f in self.frames if f.flow == i]
            distinct = {tuple(f.traversal) for f in traces}
            dropped_at: list[str] = []
            for f in traces:
                if f.dropped_at and f.dropped_at not in dropped_at:
                    dropped_at.append(f.dropped_at)
            flows.append(FlowReport(
                name=inj.name, frames=len(traces),
                traversal=traces[0].traversal if traces else [],
                distinct_traversals=len(distinct),
                delivered=sum(f.delivered_at is not None for f in traces),
                dropped=sum(f.dropped_at is not None for f in traces),
                dropped_at=dropped_at))
        counters = {f"{node}.{name}": value
                    for node in sorted(self.counters)
                    for name, value in self.counters[node].as_dict().items()}
        drops = Counter(f"{f.dropped_at}.{f.drop_reason}" for f in self.frames if f.dropped_at)
        return ScenarioReport(flows=flows, counters=counters, drops=dict(sorted(drops.items())),
                              link_log=self.link_log, taps=self.taps,
                              delivered=self.delivered, frames=self.frames)


def _is_gtpu(packet: bytes) -> bool:
    return (len(packet) >= IPV6_LEN + 8 and packet[6] == 17
            and int.from_bytes(packet[IPV6_LEN + 2:IPV6_LEN + 4], "big") == GTPU_PORT)


def run_scenario(topology: Topology, rules_text: str, injections: list[Injection],
                 latency_us: int = DEFAULT_LATENCY_US) -> ScenarioReport:
    return Simulator(topology, rules_text, injections, latency_us).run()
