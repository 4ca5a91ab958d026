"""Command line entry point: ``inca decode | run | ctl``."""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional, Sequence

from . import ctrl
from .ctrl import ControlResponse, ControlServer, Step
from .netsim import Simulator, TopologyError, load_scenario, load_topology
from .pcap import PcapError, read_pcap
from .pkt_codec import (
    CodecError,
    Icmpv6Summary,
    ParsedPacket,
    TcpSummary,
    UdpHeader,
    mac_to_str,
    parse_frame,
)

log = logging.getLogger("inca")

_PROTO_NAMES = {6: "tcp", 17: "udp", 58: "icmpv6"}


def describe(pkt: ParsedPacket) -> list[str]:
    """Layer-by-layer summary lines for one frame."""
    eth = pkt.eth
    lines = [f"eth {mac_to_str(eth.src_mac)} > {mac_to_str(eth.dst_mac)} type=0x{eth.ethertype:04x}"]
    if pkt.outer_ipv6 is None:
        lines.append(f"opaque {len(pkt.payload)} octets")
        return lines
    for hdr in (pkt.outer_ipv6, pkt.srh, pkt.encap_ipv6):
        if hdr is None:
            continue
        if hdr is pkt.srh:
            segs = ",".join(str(s) for s in hdr.segment_list)
            lines.append(f"srh sl={hdr.segments_left} last={hdr.last_entry} nh={hdr.next_header} "
                         f"segs=[{segs}]")
        else:
            lines.append(f"ipv6 {hdr.src} > {hdr.dst} nh={hdr.next_header} hlim={hdr.hop_limit} "
                         f"plen={hdr.payload_length}")
    if pkt.transport is not None:
        udp = pkt.transport
        lines.append(f"udp {udp.src_port} > {udp.dst_port} len={udp.length}")
    if pkt.gtpu is not None:
        g = pkt.gtpu
        lines.append(f"gtpu teid={g.teid} type=0x{g.message_type:02x} len={g.length}")
        pc = pkt.pdu_container
        if pc is not None:
            lines.append(f"pdu-container type={pc.pdu_type} qfi={pc.qfi}")
    if pkt.inner is not None:
        inner = pkt.inner
        ip = inner.ipv6
        name = _PROTO_NAMES.get(inner.l4_proto, str(inner.l4_proto))
        if isinstance(inner.l4, (UdpHeader, TcpSummary)):
            detail = f"{ip.src}.{inner.l4.src_port} > {ip.dst}.{inner.l4.dst_port}"
        elif isinstance(inner.l4, Icmpv6Summary):
            detail = f"{ip.src} > {ip.dst} type={inner.l4.type} code={inner.l4.code}"
        else:
            detail = f"{ip.src} > {ip.dst}"
        lines.append(f"inner {name} {detail} payload={len(inner.payload)}")
    elif pkt.payload:
        lines.append(f"opaque {len(pkt.payload)} octets")
    return lines


def decode_text(data: bytes) -> str:
    out = []
    for i, rec in enumerate(read_pcap(data), start=1):
        out.append(f"frame {i} t={rec.ts_sec}.{rec.ts_usec:06d} len={len(rec.frame)}")
        try:
            body = describe(parse_frame(rec.frame))
        except CodecError as exc:
            body = [f"error {type(exc).__name__}: {exc}"]
        out.extend("  " + line for line in body)
    return "".join(line + "\n" for line in out)


def cmd_decode(args: argparse.Namespace) -> int:
    try:
        with open(args.pcap, "rb") as fh:
            data = fh.read()
        text = decode_text(data)
    except OSError as exc:
        print(f"inca decode: {exc}", file=sys.stderr)
        return 2
    except PcapError as exc:
        print(f"inca decode: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    sys.stdout.write(text)
    return 0


def _read(path: str, what: str) -> str:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise TopologyError(f"{what} {path}: {exc.strerror}") from None


def cmd_run(args: argparse.Namespace) -> int:
    try:
        topo = load_topology(_read(args.topology, "topology"))
        rules_text = _read(args.rules, "rules")
        ctrl.load_rules_file(rules_text)
        injections = load_scenario(_read(args.scenario, "scenario"), topo)
        sim = Simulator(topo, rules_text, injections)
    except (TopologyError, ValueError, LookupError) as exc:
        print(f"inca run: {exc}", file=sys.stderr)
        return 2

    if args.ctl:
        _serve(sim, args.ctl)
    else:
        sim.step(len(injections))
    report = sim.report()
    report.write_captures(args.capture_dir)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write(report.to_json())
    else:
        sys.stdout.write(report.to_json())
    return 0


def _serve(sim: Simulator, addr: str) -> None:
    def handle(line: str) -> ControlResponse:
        try:
            cmd = ctrl.parse_command(line)
        except ctrl.ControlSyntaxError as exc:
            return ControlResponse.error("SyntaxError", str(exc))
        if isinstance(cmd, Step):
            sim.step(cmd.count)
            body = [f"step={sim.next_step}/{len(sim.injections)}"]
            return ControlResponse(True, body + (["done"] if sim.done else []))
        if sim.inca is None:
            return ControlResponse.error("NoInca", "topology has no inca node")
        return ctrl.apply(cmd, sim.inca)

    server = ControlServer(addr)
    log.info("control channel on %s, waiting for STEP commands", addr)
    try:
        server.serve(handle, lambda: sim.done)
    finally:
        server.close()


def cmd_ctl(args: argparse.Namespace) -> int:
    try:
        ok, _, raw = ctrl.send_command(args.ctl, " ".join(args.command))
    except OSError as exc:
        print(f"inca ctl: cannot reach {args.ctl}: {exc}", file=sys.stderr)
        return 2
    sys.stdout.write(raw)
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="inca", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("decode", help="print a layer summary of every frame in a pcap")
    p.add_argument("pcap")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("run", help="run a scenario through a topology")
    p.add_argument("--topology", required=True)
    p.add_argument("--rules", required=True)
    p.add_argument("--scenario", required=True)
    p.add_argument("--capture-dir", required=True)
    p.add_argument("--ctl", help="serve the control channel here; injections then wait for STEP")
    p.add_argument("--report", help="write the JSON report here instead of stdout")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ctl", help="send one control command to a running scenario")
    p.add_argument("--ctl", required=True)
    p.add_argument("command", nargs="+")
    p.set_defaults(func=cmd_ctl)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
