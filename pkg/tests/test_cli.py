import json
import os
import re
import subprocess
import sys
import time

import pytest

from inca.cli import main
from inca.pcap import CaptureRecord, read_pcap, write_pcap
from inca.pkt_codec import parse_frame


def run_args(paths, capdir, rules=None, *extra):
    return ["run", "--topology", paths["poc.topo"], "--rules", rules or paths["poc.rules"],
            "--scenario", paths["poc.scenario.json"], "--capture-dir", str(capdir), *extra]


@pytest.fixture(scope="module")
def poc_capdir(tmp_path_factory, poc_paths):
    capdir = tmp_path_factory.mktemp("cap")
    report = capdir / "report.json"
    assert main(run_args(poc_paths, capdir, None, "--report", str(report))) == 0
    return capdir


def test_run_writes_report_and_captures(poc_capdir):
    report = json.loads((poc_capdir / "report.json").read_text())
    flows = {f["name"]: f for f in report["flows"]}
    assert flows["dash"]["traversal"] == ["UE", "RAN", "INCA", "NF1", "NF2", "INCA", "UPF", "DN"]
    assert flows["icmp-monitor"]["traversal"] == ["UE", "RAN", "INCA", "NF1", "NF3"]
    assert flows["icmp-monitor"]["dropped_at"] == ["NF3"]
    assert report["counters"]["INCA.rule.1.hits"] == 100
    names = sorted(p.name for p in poc_capdir.glob("*.pcap"))
    assert names == ["INCA-NF1.pcap", "INCA-NF2.pcap", "INCA-NF3.pcap", "INCA-UPF.pcap",
                     "RAN-INCA.pcap", "UE-RAN.pcap", "UPF-DN.pcap", "tap-NF1.pcap"]


def test_decode_nf1_link(poc_capdir, capsys):
    assert main(["decode", str(poc_capdir / "INCA-NF1.pcap")]) == 0
    out = capsys.readouterr().out
    sls = re.findall(r"srh sl=(\d)", out)
    assert sls[:4] == ["2", "1", "2", "1"]
    first = out.split("frame 2 ")[0]
    assert "gtpu teid=100" in first and "pdu-container type=1 qfi=1" in first
    assert "inner udp fd00:1::10.40000 > fd00:9::80.8080 payload=1200" in first
    assert first.startswith("frame 1 t=0.000002 len=1422\n")


def test_decode_is_pure(poc_capdir, capsys):
    main(["decode", str(poc_capdir / "INCA-NF1.pcap")])
    a = capsys.readouterr().out
    main(["decode", str(poc_capdir / "INCA-NF1.pcap")])
    assert capsys.readouterr().out == a


def test_decode_empty_and_bad(tmp_path, capsys):
    empty = tmp_path / "empty.pcap"
    empty.write_bytes(write_pcap([]))
    assert main(["decode", str(empty)]) == 0
    assert capsys.readouterr().out == ""
    junk = tmp_path / "junk.txt"
    junk.write_text("hello, this is not a capture\n")
    assert main(["decode", str(junk)]) != 0
    assert "BadMagic" in capsys.readouterr().err
    assert main(["decode", str(tmp_path / "missing.pcap")]) != 0


def test_decode_reports_codec_errors(tmp_path, capsys):
    frame = bytes(12) + b"\x86\xdd" + b"\x60" + bytes(3) + b"\x01\x00" + bytes(34)
    path = tmp_path / "bad.pcap"
    path.write_bytes(write_pcap([CaptureRecord(0, 0, frame)]))
    assert main(["decode", str(path)]) == 0
    assert "error TruncatedHeader" in capsys.readouterr().out


def test_empty_rules_are_pass_through(tmp_path, poc_paths, capsys):
    assert main(run_args(poc_paths, tmp_path, os.devnull)) == 0
    report = json.loads(capsys.readouterr().out)
    for flow in report["flows"]:
        assert flow["traversal"] == ["UE", "RAN", "INCA", "UPF", "DN"]
        assert flow["dropped_at"] == []


def test_validation_errors_exit_nonzero(tmp_path, poc_paths, capsys):
    bad = tmp_path / "bad.topo"
    doc = json.loads(open(poc_paths["poc.topo"]).read())
    doc["nodes"][3]["behavior"] = "explode"
    bad.write_text(json.dumps(doc))
    args = run_args(poc_paths, tmp_path)
    args[2] = str(bad)
    assert main(args) == 2
    assert "nodes[3].behavior" in capsys.readouterr().err
    rules = tmp_path / "bad.rules"
    rules.write_text("rule 1 prio=1 chain=nope\n")
    assert main(run_args(poc_paths, tmp_path, str(rules))) == 2
    assert "nope" in capsys.readouterr().err


def test_ctl_unreachable(tmp_path, capsys):
    assert main(["ctl", "--ctl", str(tmp_path / "none.sock"), "PING"]) == 2


def test_midrun_rule_change_over_ctl(tmp_path, poc_paths, capsys):
    sock = tmp_path / "ctl.sock"
    capdir = tmp_path / "cap"
    proc = subprocess.Popen([sys.executable, "-m", "inca", *run_args(poc_paths, capdir, os.devnull,
                                                                      "--ctl", str(sock))],
                            stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
    try:
        deadline = time.monotonic() + 20
        while not sock.exists():
            assert proc.poll() is None and time.monotonic() < deadline
            time.sleep(0.05)

        def ctl(*words):
            code = main(["ctl", "--ctl", str(sock), *words])
            return code, capsys.readouterr().out

        assert ctl("PING") == (0, "OK\n")
        assert ctl("DEL-RULE", "id=99")[0] == 1
        assert ctl("STEP", "1") == (0, "OK\nstep=1/2\n")
        assert ctl("ADD-CHAIN", "icmp-chain", "=", "fd00:a::1,fd00:c::1")[0] == 0
        assert ctl("ADD-RULE", "id=2", "prio=10", "proto=58", "chain=icmp-chain")[0] == 0
        code, out = ctl("STATS")
        assert code == 0 and out.startswith("OK\n") and "rx.ran=100" in out
        assert ctl("STEP", "1") == (0, "OK\nstep=2/2\ndone\n")
        stdout, _ = proc.communicate(timeout=20)
    finally:
        if proc.poll() is None:
            proc.kill()
    assert proc.returncode == 0
    flows = {f["name"]: f for f in json.loads(stdout)["flows"]}
    assert flows["dash"]["traversal"] == ["UE", "RAN", "INCA", "UPF", "DN"]
    assert flows["icmp-monitor"]["traversal"] == ["UE", "RAN", "INCA", "NF1", "NF3"]
    nf1 = read_pcap((capdir / "INCA-NF1.pcap").read_bytes())
    assert len(nf1) == 20  # ten ICMP frames each way, no DASH frames
    assert all(parse_frame(r.frame).encap_ipv6 is not None for r in nf1)


def test_runs_are_byte_identical(tmp_path, poc_paths):
    outs = []
    for name in ("a", "b"):
        capdir = tmp_path / name
        report = tmp_path / f"{name}.json"
        assert main(run_args(poc_paths, capdir, None, "--report", str(report))) == 0
        outs.append((report.read_bytes(), {p.name: p.read_bytes() for p in capdir.iterdir()}))
    assert outs[0] == outs[1]
