"""Acceptance criteria, one test each.  Every test prints a single
``[PASS]``/``[FAIL]`` line (criterion 9 prints ``[INFO]``) and then asserts.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines inline,
or ``python tests/test_acceptance.py`` for the bare summary.
"""

import random
import sys
import time
from ipaddress import IPv6Address, IPv6Network

import pytest

from inca import bundled, srv6
from inca.classifier import ChainPolicy, Match, MatchKey, Rule, RuleTable
from inca.ctrl import handle_line
from inca.netsim import (
    NodeKind,
    Simulator,
    load_scenario,
    load_topology,
    ran_encapsulate,
)
from inca.pipeline import PortRole, new_state, process
from inca.pkt_codec import (
    IPPROTO_ICMPV6,
    ETH_LEN,
    ethernet_frame,
    make_inner_packet,
    parse_frame,
    serialize,
    udp_checksum_ok,
)

DASH_PATH = ["UE", "RAN", "INCA", "NF1", "NF2", "INCA", "UPF", "DN"]
ICMP_PATH = ["UE", "RAN", "INCA", "NF1", "NF3"]

_printer = print


def report(number, title, ok, detail, info=False):
    tag = "INFO" if info else ("PASS" if ok else "FAIL")
    _printer(f"[{tag}] criterion {number}: {title}: {detail}")
    return ok


@pytest.fixture(autouse=True)
def _visible(capsys):
    """Show the verdict lines even without ``-s``."""
    global _printer

    def emit(line):
        with capsys.disabled():
            print("\n" + line, flush=True)
    _printer = emit
    yield
    _printer = print


def poc_inputs():
    topo = load_topology(bundled("poc.topo"))
    return topo, bundled("poc.rules"), load_scenario(bundled("poc.scenario.json"), topo)


def run_poc(rules=None):
    topo, poc_rules, injections = poc_inputs()
    return Simulator(topo, poc_rules if rules is None else rules, injections).run()


def sl_of(frame):
    return parse_frame(frame).srh.segments_left


def inner_proto(frame):
    pkt = parse_frame(frame)
    return pkt.inner.l4_proto if pkt.inner is not None else None


# -- 1 ------------------------------------------------------------------------

def criterion_1():
    start = time.perf_counter()
    rep = run_poc()
    elapsed = time.perf_counter() - start
    dash = [t for t in rep.frames if t.flow == 0]
    problems = []
    if len(dash) != 100:
        problems.append(f"{len(dash)} DASH frames")
    if any(t.traversal != DASH_PATH for t in dash):
        problems.append("traversal mismatch")
    if any(t.delivered_at != "DN" or t.delivered != t.emitted for t in dash):
        problems.append("DN packet differs from UE emission")
    # per-hop SL: INCA->NF1 2, NF1->INCA 1, INCA->NF2 1, NF2->INCA 0
    legs = {
        ("INCA-NF1", "INCA"): 2, ("INCA-NF1", "NF1"): 1,
        ("INCA-NF2", "INCA"): 1, ("INCA-NF2", "NF2"): 0,
    }
    for (link, sender), want in legs.items():
        sls = [sl_of(f) for f in rep.egress(link, sender) if inner_proto(f) == 17]
        if len(sls) != 100 or set(sls) != {want}:
            problems.append(f"{link} from {sender}: SL values {sorted(set(sls))} over {len(sls)} frames")
    if elapsed >= 5:
        problems.append(f"took {elapsed:.2f}s")
    ok = not problems
    report(1, "PoC chain A", ok,
           "100/100 frames on " + "->".join(DASH_PATH) + f", SL 2,1,0, inner byte-exact, {elapsed:.2f}s"
           if ok else "; ".join(problems))
    return ok


# -- 2 ------------------------------------------------------------------------

def criterion_2():
    rep = run_poc()
    icmp = [t for t in rep.frames if t.flow == 1]
    problems = []
    if len(icmp) != 10:
        problems.append(f"{len(icmp)} ICMP frames")
    if any(t.traversal != ICMP_PATH or t.dropped_at != "NF3" for t in icmp):
        problems.append("traversal or drop point mismatch")
    at_dn = [f for f in rep.egress("UPF-DN", "UPF")
             if parse_frame(f).outer_ipv6 and parse_frame(f).outer_ipv6.next_header == IPPROTO_ICMPV6]
    if at_dn:
        problems.append(f"{len(at_dn)} ICMPv6 frames reached DN")
    ok = not problems
    report(2, "PoC chain B", ok,
           "10/10 ICMPv6 frames on " + "->".join(ICMP_PATH) + ", dropped at NF3, 0 ICMPv6 frames at DN"
           if ok else "; ".join(problems))
    return ok


# -- 3 ------------------------------------------------------------------------

def mixed_scenario(rng, total):
    injections, n = [], 0
    while n < total:
        proto = rng.choice([6, 17, 58])
        count = rng.randint(20, 60)
        injections.append({"name": f"mix{len(injections)}", "at": "UE", "gen": {
            "src": "fd00:1::10", "dst": "fd00:9::80", "proto": proto,
            "sport": rng.randrange(1, 65536), "dport": rng.randrange(1, 65536),
            "payload_len": rng.randrange(0, 1400), "count": count, "gap_us": rng.randint(1, 50)}})
        n += count
    return {"injections": injections}, n


def criterion_3():
    topo = load_topology(bundled("poc.topo"))
    doc, n = mixed_scenario(random.Random(3), 1000)
    rep = Simulator(topo, "", load_scenario(doc, topo)).run()
    ran_out = rep.egress("RAN-INCA", "RAN")
    upf_in = rep.egress("INCA-UPF", "INCA")
    same = len(ran_out) == len(upf_in) == n and all(
        a[ETH_LEN:] == b[ETH_LEN:] for a, b in zip(ran_out, upf_in))
    ok = same and n >= 1000
    report(3, "transparency with empty rules", ok,
           f"{len(upf_in)}/{len(ran_out)} frames at UPF equal RAN egress past L2 ({n} injected)")
    return ok


# -- 4 ------------------------------------------------------------------------

def criterion_4(trials=1500):
    rng = random.Random(4)
    topo = load_topology(bundled("poc.topo"))
    ran = topo.of_kind(NodeKind.RAN)[0]
    cfg = srv6.EncapConfig(outer_src=IPv6Address("fd00:100::1"), inca_sid=IPv6Address("fd00:100::1"))
    bad = 0
    for i in range(trials):
        proto = rng.choice([6, 17, 58])
        inner = make_inner_packet(f"fd00:1::{rng.randrange(1, 0xFFFF):x}", "fd00:9::80", proto,
                                  rng.randrange(65536), rng.randrange(65536),
                                  rng.randbytes(rng.randrange(0, 1401)))
        ran.tunnels[0] = type(ran.tunnels[0])(rng.randrange(2**32), rng.choice([None, rng.randrange(64)]))
        packet = ran_encapsulate(ran, inner)
        if i % 3 == 0:  # a third of the frames as chain traffic
            chain = [IPv6Address(rng.randrange(1, 2**128)) for _ in range(rng.randint(1, 7))]
            packet = srv6.h_encaps(packet, chain + [cfg.inca_sid], cfg)
        frame = ethernet_frame(packet, rng.randbytes(6), rng.randbytes(6))
        pkt = parse_frame(frame)
        carrier = pkt.transport_ipv6
        udp_at = pkt.layer_offsets["udp"]
        checks = [
            serialize(pkt) == frame,
            udp_checksum_ok(carrier.src, carrier.dst, frame[udp_at:]),
        ]
        if proto == 17:
            start = pkt.layer_offsets["inner"]
            checks.append(udp_checksum_ok(inner[8:24], inner[24:40], frame[start + 40:]))
        bad += not all(checks)
    ok = bad == 0 and trials >= 1000
    report(4, "codec round trip", ok, f"{trials - bad}/{trials} frames byte-exact with valid UDP checksums")
    return ok


# -- 5 ------------------------------------------------------------------------

def criterion_5(trials=600):
    rng = random.Random(5)
    bad = 0
    for _ in range(trials):
        n = rng.randint(1, 8)
        sids = list({IPv6Address(rng.randrange(1, 2**128)) for _ in range(n)})
        while len(sids) < n:
            sids.append(IPv6Address(rng.randrange(1, 2**128)))
        path = sids[:n]
        cfg = srv6.EncapConfig(outer_src=path[-1], inca_sid=path[-1])
        inner = make_inner_packet("fd00:1::10", "fd00:9::80", rng.choice([6, 17, 58]),
                                  rng.randrange(65536), rng.randrange(65536),
                                  rng.randbytes(rng.randrange(0, 1400)))
        pkt = srv6.h_encaps(inner, path, cfg)
        good = True
        for k in range(n - 1):
            good &= srv6.active_segment(pkt) == (n - 1 - k, path[k])
            pkt = srv6.end_process(pkt, path[k])
        good &= srv6.active_segment(pkt) == (0, path[n - 1])
        good &= srv6.decap(pkt, cfg.inca_sid) == inner
        bad += not good
    ok = bad == 0 and trials >= 500
    report(5, "SRv6 inverse and pointer laws", ok, f"{trials - bad}/{trials} trials, n in [1,8]")
    return ok


# -- 6 ------------------------------------------------------------------------

POOL = [IPv6Address(f"fd00:{i}::{j}") for i in range(1, 5) for j in range(1, 5)]
CHAINS = [ChainPolicy.of("a", ["fd00:a::1"]), ChainPolicy.of("b", ["fd00:b::1", "fd00:c::1"])]


def rand_match(rng):
    def maybe(make):
        return make() if rng.random() < 0.35 else None
    return Match(teid=maybe(lambda: rng.randrange(4)), qfi=maybe(lambda: rng.randrange(4)),
                 slice_id=maybe(lambda: rng.randrange(3)),
                 src=maybe(lambda: IPv6Network(f"{rng.choice(POOL)}/{rng.choice([0, 16, 32, 128])}", strict=False)),
                 dst=maybe(lambda: IPv6Network(f"{rng.choice(POOL)}/{rng.choice([0, 32, 128])}", strict=False)),
                 proto=maybe(lambda: rng.choice([6, 17, 58])), sport=maybe(lambda: rng.randrange(3)),
                 dport=maybe(lambda: rng.randrange(3)))


def rand_key(rng):
    proto = rng.choice([6, 17, 58, None])
    if proto is None:
        return MatchKey(rng.randrange(4), rng.randrange(4), rng.randrange(3))
    ports = (0, 0) if proto == 58 else (rng.randrange(3), rng.randrange(3))
    return MatchKey(rng.randrange(4), rng.randrange(4), rng.randrange(3),
                    rng.choice(POOL), rng.choice(POOL), proto, *ports)


def linear_scan(rules, key):
    best = None
    for r in rules:
        if r.match.matches(key) and (best is None or r.priority > best.priority
                                     or (r.priority == best.priority and r.rule_id < best.rule_id)):
            best = r
    return None if best is None else (best.rule_id, best.action)


def criterion_6(tables=1000, keys_per_table=10):
    rng = random.Random(6)
    trials = bad = hits = 0
    for _ in range(tables):
        ids = rng.sample(range(1, 100_000), rng.randint(0, 256))
        rules = [Rule(i, rng.randrange(6), rand_match(rng), rng.choice(CHAINS)) for i in ids]
        order = rules[:]
        rng.shuffle(order)
        table = RuleTable(order)
        for _ in range(keys_per_table):
            key = rand_key(rng)
            want = linear_scan(rules, key)
            bad += table.lookup(key) != want
            hits += want is not None
            trials += 1
    ok = bad == 0 and trials >= 10_000
    report(6, "classifier vs linear-scan oracle", ok,
           f"{trials - bad}/{trials} (table, key) trials agree, {hits} matched")
    return ok


# -- 7 ------------------------------------------------------------------------

def fuzz_line(rng):
    kind = rng.randrange(10)
    names = ["c1", "c2", "c3", "ghost"]
    if kind < 4:
        fields = rng.choice(["", "qfi=1", "proto=58", "teid=9 qfi=3", "src=fd00::/16", "qfi=64", "sport=x"])
        return f"ADD-RULE id={rng.randrange(1, 15)} prio={rng.randrange(-3, 4)} {fields} chain={rng.choice(names)}"
    if kind < 6:
        return f"DEL-RULE id={rng.choice([str(rng.randrange(1, 15)), '0', 'nope'])}"
    if kind < 8:
        sids = ",".join(rng.choice(["fd00:a::1", "fd00:b::1", "fd00:c::1", "bogus"])
                        for _ in range(rng.randrange(0, 4)))
        return f"ADD-CHAIN {rng.choice(names[:3])} = {sids}"
    if kind == 8:
        return f"SLICE-MAP teid={rng.randrange(4)} slice={rng.choice(['1', '2', '70000'])}"
    return rng.choice(["LIST-RULES", "STATS", "PING", "STEP 1", "HELLO", "DEL-RULE"])


def table_state(state):
    return state.table.copy(), dict(state.chains)


def criterion_7(commands=2000):
    rng = random.Random(7)
    sid = IPv6Address("fd00:100::1")
    live, accepted, errs = new_state(sid), [], 0
    for _ in range(commands):
        line = fuzz_line(rng)
        if handle_line(line, live).ok:
            accepted.append(line)
        else:
            errs += 1
    replay = new_state(sid)
    replay_ok = all(handle_line(line, replay).ok for line in accepted)
    ok = replay_ok and table_state(replay) == table_state(live) and commands >= 1000
    report(7, "control-plane transactionality", ok,
           f"{commands} commands ({len(accepted)} OK, {errs} ERR); replaying OK commands "
           + ("reproduces the table" if ok else "diverges"))
    return ok


# -- 8 ------------------------------------------------------------------------

def criterion_8():
    a, b = run_poc(), run_poc()
    same_report = a.to_json() == b.to_json()
    files_a, files_b = a.pcap_files(), b.pcap_files()
    ok = same_report and files_a == files_b
    report(8, "determinism", ok,
           f"reports identical={same_report}, {sum(files_a[k] == files_b.get(k) for k in files_a)}"
           f"/{len(files_a)} capture files identical")
    return ok


# -- 9 ------------------------------------------------------------------------

def criterion_9(seconds=1.0):
    topo = load_topology(bundled("poc.topo"))
    ran = topo.of_kind(NodeKind.RAN)[0]
    state = new_state(IPv6Address("fd00:100::1"))
    for line in bundled("poc.rules").splitlines():
        if line.startswith("chain"):
            name, sids = line[6:].split("=")
            handle_line(f"ADD-CHAIN {name.strip()} = {sids.strip()}", state)
        elif line.startswith("rule"):
            handle_line("ADD-RULE id=" + line[5:], state)
    frames = [(PortRole.RAN, ethernet_frame(ran_encapsulate(ran, make_inner_packet(
        "fd00:1::10", "fd00:9::80", proto, 1, 2, bytes(size)))))
        for proto in (6, 17, 58) for size in (64, 512, 1200)]
    calls, start = 0, time.perf_counter()
    while time.perf_counter() - start < seconds:
        for port, frame in frames:
            process(state, port, frame)
        calls += len(frames)
    rate = calls / (time.perf_counter() - start)
    report(9, "pipeline throughput (informational)", rate >= 50_000,
           f"{rate:,.0f} process() calls/s single-threaded (reference 50,000/s)", info=True)
    return rate


def test_criterion_1_poc_chain_a():
    assert criterion_1()


def test_criterion_2_poc_chain_b():
    assert criterion_2()


def test_criterion_3_transparency_baseline():
    assert criterion_3()


def test_criterion_4_codec_round_trip():
    assert criterion_4()


def test_criterion_5_srv6_algebra():
    assert criterion_5()


def test_criterion_6_classifier_oracle():
    assert criterion_6()


def test_criterion_7_control_transactionality():
    assert criterion_7()


def test_criterion_8_determinism():
    assert criterion_8()


def test_criterion_9_throughput_informational():
    criterion_9()


if __name__ == "__main__":
    results = [criterion_1(), criterion_2(), criterion_3(), criterion_4(), criterion_5(),
               criterion_6(), criterion_7(), criterion_8()]
    criterion_9()
    sys.exit(0 if all(results) else 1)
