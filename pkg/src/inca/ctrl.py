"""Rule configuration: the rules-file grammar and the runtime control channel.

Rules file (``#`` starts a comment)::

    chain <name> = <sid1>,<sid2>[,...]
    rule <id> prio=<int> [teid=..] [qfi=..] [slice=..] [src=<ipv6>[/len]]
         [dst=<ipv6>[/len]] [proto=..] [sport=..] [dport=..] chain=<name>
    slice-map teid=<u32> slice=<u16>

Control commands, one per line::

    ADD-RULE id=<id> prio=<int> [fields...] chain=<name>
    DEL-RULE id=<id>
    ADD-CHAIN <name> = <sid1>,<sid2>[,...]
    SLICE-MAP teid=<u32> slice=<u16>
    LIST-RULES | STATS | PING | STEP [<n>]

A response is ``OK`` or ``ERR <reason>``, then zero or more body lines,
then an empty line.
"""

from __future__ import annotations

import dataclasses
import logging
import os
import re
import socket
from dataclasses import dataclass, field
from ipaddress import IPv6Address, IPv6Network
from typing import Callable, Optional, Union

from .classifier import (
    ChainPolicy,
    DuplicateRuleId,
    Match,
    Rule,
    RuleTable,
    UnknownRuleId,
)

log = logging.getLogger(__name__)

_NAME = re.compile(r"[A-Za-z0-9_.\-]+\Z")


class ControlSyntaxError(ValueError):
    """A command or rules-file line does not follow the grammar."""

    def __init__(self, message: str, position: int = 0, expected: str = "",
                 line: Optional[int] = None):
        self.message = message
        self.position = position
        self.expected = expected
        self.line = line
        where = f"line {line}, " if line is not None else ""
        super().__init__(f"{where}column {position + 1}: {message}"
                         + (f" (expected {expected})" if expected else ""))

    def at_line(self, line: int) -> ControlSyntaxError:
        return ControlSyntaxError(self.message, self.position, self.expected, line)


class UnknownChain(LookupError):
    pass


# -- commands ----------------------------------------------------------------

@dataclass(frozen=True)
class AddRule:
    rule_id: int
    priority: int
    match: Match
    chain: str


@dataclass(frozen=True)
class DelRule:
    rule_id: int


@dataclass(frozen=True)
class AddChain:
    name: str
    sids: tuple[IPv6Address, ...]


@dataclass(frozen=True)
class SliceMap:
    teid: int
    slice_id: int


@dataclass(frozen=True)
class ListRules:
    pass


@dataclass(frozen=True)
class Stats:
    pass


@dataclass(frozen=True)
class Ping:
    pass


@dataclass(frozen=True)
class Step:
    count: int = 1


ControlCommand = Union[AddRule, DelRule, AddChain, SliceMap, ListRules, Stats, Ping, Step]


@dataclass
class ControlResponse:
    ok: bool
    body: list[str] = field(default_factory=list)
    reason: str = ""

    @classmethod
    def error(cls, kind: str, detail: str = "") -> ControlResponse:
        return cls(False, reason=f"{kind}: {detail}" if detail else kind)

    def render(self) -> str:
        head = "OK" if self.ok else f"ERR {self.reason}"
        return "\n".join([head, *self.body, ""]) + "\n"


# -- field grammar -----------------------------------------------------------

_INT_FIELDS = {"teid": 32, "qfi": 6, "slice": 16, "proto": 8, "sport": 16, "dport": 16}
_MATCH_ATTR = {"teid": "teid", "qfi": "qfi", "slice": "slice_id", "src": "src", "dst": "dst",
               "proto": "proto", "sport": "sport", "dport": "dport"}


def _tokens(text: str) -> list[tuple[int, str]]:
    return [(m.start(), m.group()) for m in re.finditer(r"\S+", text)]


def _uint(value: str, bits: int, pos: int, name: str) -> int:
    if not value.isdigit():
        raise ControlSyntaxError(f"{name}={value!r} is not a number", pos, f"unsigned {bits}-bit integer")
    n = int(value)
    if n >= 1 << bits:
        raise ControlSyntaxError(f"{name}={n} is out of range", pos, f"unsigned {bits}-bit integer")
    if name == "qfi" and n > 63:
        raise ControlSyntaxError(f"qfi={n} is out of range", pos, "0..63")
    return n


def _network(value: str, pos: int, name: str) -> IPv6Network:
    try:
        return IPv6Network(value, strict=False)
    except ValueError:
        raise ControlSyntaxError(f"{name}={value!r} is not an IPv6 address or prefix", pos,
                                 "<ipv6>[/len]") from None


def _sid_list(text: str, pos: int) -> tuple[IPv6Address, ...]:
    sids = []
    for part in text.split(","):
        try:
            sids.append(IPv6Address(part.strip()))
        except ValueError:
            raise ControlSyntaxError(f"{part.strip()!r} is not a SID", pos, "<ipv6>") from None
    return tuple(sids)


def _rule_fields(tokens: list[tuple[int, str]], end: int, id_given: Optional[int] = None) -> AddRule:
    values: dict[str, object] = {}
    if id_given is not None:
        values["id"] = id_given
    for pos, tok in tokens:
        key, sep, value = tok.partition("=")
        if not sep or not value:
            raise ControlSyntaxError(f"malformed field {tok!r}", pos, "<key>=<value>")
        if key in values:
            raise ControlSyntaxError(f"field {key!r} given twice", pos)
        if key == "id":
            values[key] = _uint(value, 32, pos, key)
            if values[key] == 0:
                raise ControlSyntaxError("rule id must be positive", pos, "positive integer")
        elif key == "prio":
            if not re.fullmatch(r"-?\d+", value):
                raise ControlSyntaxError(f"prio={value!r} is not an integer", pos, "integer")
            values[key] = int(value)
        elif key in _INT_FIELDS:
            values[key] = _uint(value, _INT_FIELDS[key], pos, key)
        elif key in ("src", "dst"):
            values[key] = _network(value, pos, key)
        elif key == "chain":
            if not _NAME.match(value):
                raise ControlSyntaxError(f"bad chain name {value!r}", pos, "chain name")
            values[key] = value
        else:
            raise ControlSyntaxError(f"unknown field {key!r}", pos,
                                     "one of id, prio, teid, qfi, slice, src, dst, proto, sport, dport, chain")
    for required in ("id", "prio", "chain"):
        if required not in values:
            raise ControlSyntaxError(f"missing {required}=", end, f"{required}=<value>")
    match = Match(**{_MATCH_ATTR[k]: v for k, v in values.items() if k in _MATCH_ATTR})
    return AddRule(values["id"], values["prio"], match, values["chain"])  # type: ignore[arg-type]


def _format_match(match: Match) -> list[str]:
    out = []
    for key, attr in _MATCH_ATTR.items():
        value = getattr(match, attr)
        if value is None:
            continue
        if isinstance(value, IPv6Network):
            value = value.network_address if value.prefixlen == 128 else value
        out.append(f"{key}={value}")
    return out


def format_rule(rule: Rule) -> str:
    """A rule in rules-file form."""
    return " ".join([f"rule {rule.rule_id}", f"prio={rule.priority}", *_format_match(rule.match),
                     f"chain={rule.action.chain_name}"])


def _chain_decl(tokens: list[tuple[int, str]], text: str, end: int) -> tuple[str, tuple[IPv6Address, ...]]:
    if not tokens:
        raise ControlSyntaxError("missing chain name", end, "<name>")
    pos, name = tokens[0]
    rest = text[pos + len(name):]
    if "=" in name:  # "name=sid,..." without spaces
        name, _, tail = name.partition("=")
        rest = "=" + tail + rest
    if not _NAME.match(name):
        raise ControlSyntaxError(f"bad chain name {name!r}", pos, "chain name")
    stripped = rest.lstrip()
    eq_pos = len(text) - len(stripped)
    if not stripped.startswith("="):
        raise ControlSyntaxError("missing '='", eq_pos, "'='")
    sid_text = stripped[1:].strip()
    if not sid_text:
        raise ControlSyntaxError("empty SID list", eq_pos + 1, "<sid1>,<sid2>,...")
    return name, _sid_list(sid_text, eq_pos + 1)


def _slice_map(tokens: list[tuple[int, str]], end: int) -> SliceMap:
    values = {}
    for pos, tok in tokens:
        key, sep, value = tok.partition("=")
        if key not in ("teid", "slice") or not sep or key in values:
            raise ControlSyntaxError(f"unexpected {tok!r}", pos, "teid=<u32> slice=<u16>")
        values[key] = _uint(value, _INT_FIELDS[key], pos, key)
    if set(values) != {"teid", "slice"}:
        raise ControlSyntaxError("slice map needs teid= and slice=", end, "teid=<u32> slice=<u16>")
    return SliceMap(values["teid"], values["slice"])


def parse_command(line: str) -> ControlCommand:
    text = line.rstrip("\r\n")
    toks = _tokens(text)
    if not toks:
        raise ControlSyntaxError("empty command", 0, "a command word")
    pos, word = toks[0]
    verb = word.upper()
    args = toks[1:]
    end = len(text)
    if verb == "ADD-RULE":
        return _rule_fields(args, end)
    if verb == "DEL-RULE":
        if len(args) != 1 or not args[0][1].startswith("id="):
            raise ControlSyntaxError("DEL-RULE takes one id=<n> argument",
                                     args[0][0] if args else end, "id=<n>")
        rid = _uint(args[0][1][3:], 32, args[0][0], "id")
        if rid == 0:
            raise ControlSyntaxError("rule id must be positive", args[0][0], "positive integer")
        return DelRule(rid)
    if verb == "ADD-CHAIN":
        return AddChain(*_chain_decl(args, text, end))
    if verb == "SLICE-MAP":
        return _slice_map(args, end)
    if verb == "STEP":
        if not args:
            return Step()
        if len(args) != 1:
            raise ControlSyntaxError("STEP takes at most one count", args[1][0], "end of line")
        n = _uint(args[0][1], 32, args[0][0], "count")
        if n == 0:
            raise ControlSyntaxError("step count must be positive", args[0][0], "positive integer")
        return Step(n)
    simple = {"LIST-RULES": ListRules, "STATS": Stats, "PING": Ping}
    if verb in simple:
        if args:
            raise ControlSyntaxError(f"{verb} takes no arguments", args[0][0], "end of line")
        return simple[verb]()
    raise ControlSyntaxError(f"unknown command {word!r}", pos,
                             "ADD-RULE, DEL-RULE, ADD-CHAIN, SLICE-MAP, LIST-RULES, STATS, PING or STEP")


def format_command(cmd: ControlCommand) -> str:
    """Inverse of :func:`parse_command`."""
    if isinstance(cmd, AddRule):
        return " ".join([f"ADD-RULE id={cmd.rule_id}", f"prio={cmd.priority}",
                         *_format_match(cmd.match), f"chain={cmd.chain}"])
    if isinstance(cmd, DelRule):
        return f"DEL-RULE id={cmd.rule_id}"
    if isinstance(cmd, AddChain):
        return f"ADD-CHAIN {cmd.name} = " + ",".join(str(s) for s in cmd.sids)
    if isinstance(cmd, SliceMap):
        return f"SLICE-MAP teid={cmd.teid} slice={cmd.slice_id}"
    if isinstance(cmd, Step):
        return f"STEP {cmd.count}"
    return {ListRules: "LIST-RULES", Stats: "STATS", Ping: "PING"}[type(cmd)]


# -- applying commands -------------------------------------------------------

def apply(cmd: ControlCommand, state) -> ControlResponse:
    """Apply ``cmd`` to a :class:`~inca.pipeline.PipelineState`.

    Either the whole command takes effect and ``OK`` is returned, or the
    state is left untouched and the response is ``ERR``.
    """
    table: RuleTable = state.table
    if isinstance(cmd, AddRule):
        chain = state.chains.get(cmd.chain)
        if chain is None:
            return ControlResponse.error("UnknownChain", f"no chain named {cmd.chain!r}")
        try:
            table.add_rule(Rule(cmd.rule_id, cmd.priority, cmd.match, chain))
        except DuplicateRuleId as exc:
            return ControlResponse.error("DuplicateRuleId", str(exc))
        return ControlResponse(True)
    if isinstance(cmd, DelRule):
        try:
            table.remove_rule(cmd.rule_id)
        except UnknownRuleId as exc:
            return ControlResponse.error("UnknownRuleId", str(exc))
        state.counters.discard_rule(cmd.rule_id)
        return ControlResponse(True)
    if isinstance(cmd, AddChain):
        try:
            chain = ChainPolicy(cmd.name, cmd.sids)
        except ValueError as exc:
            return ControlResponse.error("InvalidChain", str(exc))
        rebound = [dataclasses.replace(r, action=chain) for r in table
                   if r.action.chain_name == cmd.name]
        state.chains[cmd.name] = chain
        for rule in rebound:
            table.replace_rule(rule)
        return ControlResponse(True)
    if isinstance(cmd, SliceMap):
        table.teid_to_slice[cmd.teid] = cmd.slice_id
        return ControlResponse(True)
    if isinstance(cmd, ListRules):
        return ControlResponse(True, [format_rule(r) for r in table])
    if isinstance(cmd, Stats):
        return ControlResponse(True, state.counters.lines())
    if isinstance(cmd, Ping):
        return ControlResponse(True)
    if isinstance(cmd, Step):
        return ControlResponse.error("StepUnavailable", "no scenario is waiting for steps")
    raise TypeError(f"not a control command: {cmd!r}")


def handle_line(line: str, state) -> ControlResponse:
    try:
        cmd = parse_command(line)
    except ControlSyntaxError as exc:
        return ControlResponse.error("SyntaxError", str(exc))
    return apply(cmd, state)


# -- rules files -------------------------------------------------------------

@dataclass
class RulesConfig:
    chains: dict[str, ChainPolicy] = field(default_factory=dict)
    rules: list[Rule] = field(default_factory=list)
    slice_maps: dict[int, int] = field(default_factory=dict)
    commands: list[ControlCommand] = field(default_factory=list)

    def install(self, state) -> None:
        """Replay the file as control commands onto ``state``."""
        for cmd in self.commands:
            resp = apply(cmd, state)
            if not resp.ok:
                raise ValueError(f"rules file does not apply cleanly: {resp.reason}")


def _file_line(text: str) -> tuple[str, ControlCommand]:
    """Classify one rules-file line as a command; returns (kind, command)."""
    toks = _tokens(text)
    pos, word = toks[0]
    args = toks[1:]
    if word == "chain":
        return "chain", AddChain(*_chain_decl(args, text, len(text)))
    if word == "rule":
        if not args:
            raise ControlSyntaxError("missing rule id", len(text), "<id>")
        id_pos, id_tok = args[0]
        rid = _uint(id_tok, 32, id_pos, "id")
        if rid == 0:
            raise ControlSyntaxError("rule id must be positive", id_pos, "positive integer")
        if any(t.startswith("id=") for _, t in args[1:]):
            raise ControlSyntaxError("rule id given twice", id_pos)
        return "rule", _rule_fields(args[1:], len(text), id_given=rid)
    if word == "slice-map":
        return "slice", _slice_map(args, len(text))
    raise ControlSyntaxError(f"unknown declaration {word!r}", pos, "chain, rule or slice-map")


def load_rules_file(text: str) -> RulesConfig:
    """Parse a rules file.  Chains may be declared after the rules using them."""
    cfg = RulesConfig()
    pending: list[tuple[int, ControlCommand]] = []
    chain_cmds: list[ControlCommand] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        try:
            kind, cmd = _file_line(line)
        except ControlSyntaxError as exc:
            raise exc.at_line(lineno) from None
        if kind == "chain":
            try:
                cfg.chains[cmd.name] = ChainPolicy(cmd.name, cmd.sids)
            except ValueError as exc:
                raise ControlSyntaxError(str(exc), 0, line=lineno) from None
            chain_cmds.append(cmd)
        else:
            pending.append((lineno, cmd))

    seen: set[int] = set()
    for lineno, cmd in pending:
        if isinstance(cmd, AddRule):
            if cmd.chain not in cfg.chains:
                raise UnknownChain(f"line {lineno}: rule {cmd.rule_id} uses undefined chain {cmd.chain!r}")
            if cmd.rule_id in seen:
                raise DuplicateRuleId(f"line {lineno}: rule {cmd.rule_id} declared twice")
            seen.add(cmd.rule_id)
            cfg.rules.append(Rule(cmd.rule_id, cmd.priority, cmd.match, cfg.chains[cmd.chain]))
        else:
            cfg.slice_maps[cmd.teid] = cmd.slice_id
    cfg.commands = chain_cmds + [cmd for _, cmd in pending]
    return cfg


def build_state(rules_text: str, inca_sid, outer_src=None, **kwargs):
    """Fresh pipeline state configured from a rules file."""
    from .pipeline import new_state

    state = new_state(inca_sid, outer_src, **kwargs)
    load_rules_file(rules_text).install(state)
    return state


# -- control socket ----------------------------------------------------------

def _socket_for(addr: str) -> tuple[socket.socket, object]:
    """``host:port`` selects TCP, anything else is a Unix socket path."""
    host, sep, port = addr.rpartition(":")
    if sep and port.isdigit() and "/" not in addr:
        return socket.socket(socket.AF_INET, socket.SOCK_STREAM), (host or "127.0.0.1", int(port))
    return socket.socket(socket.AF_UNIX, socket.SOCK_STREAM), addr


class ControlServer:
    """Line-protocol server; one client at a time, further clients queue in the backlog."""

    def __init__(self, addr: str):
        self.addr = addr
        self.sock, bind_to = _socket_for(addr)
        if isinstance(bind_to, str) and os.path.exists(bind_to):
            os.unlink(bind_to)
        if self.sock.family == socket.AF_INET:
            self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self.sock.bind(bind_to)
        self.sock.listen(8)

    def serve(self, handle: Callable[[str], ControlResponse], done: Callable[[], bool]) -> None:
        """Answer command lines until ``done()`` is true after a response."""
        while not done():
            conn, _ = self.sock.accept()
            with conn, conn.makefile("rw", encoding="utf-8", newline="\n") as stream:
                for line in stream:
                    if not line.strip():
                        continue
                    resp = handle(line)
                    log.debug("ctl %r -> %s", line.strip(), "OK" if resp.ok else resp.reason)
                    stream.write(resp.render())
                    stream.flush()
                    if done():
                        break

    def close(self) -> None:
        self.sock.close()
        if self.sock.family == socket.AF_UNIX and os.path.exists(self.addr):
            os.unlink(self.addr)


def send_command(addr: str, line: str, timeout: float = 30.0) -> tuple[bool, list[str], str]:
    """Send one command; returns (ok, body lines, raw response text)."""
    sock, target = _socket_for(addr)
    sock.settimeout(timeout)
    with sock:
        sock.connect(target)
        with sock.makefile("rw", encoding="utf-8", newline="\n") as stream:
            stream.write(line.strip() + "\n")
            stream.flush()
            lines = []
            for resp_line in stream:
                resp_line = resp_line.rstrip("\n")
                if not resp_line:
                    break
                lines.append(resp_line)
    if not lines:
        raise ConnectionError("control channel closed without a response")
    raw = "\n".join(lines) + "\n"
    return lines[0] == "OK", lines[1:], raw
