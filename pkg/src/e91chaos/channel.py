"""Classical channel: length-prefixed JSON frames and the three-role session.

Wire format: a 4-byte big-endian unsigned length followed by exactly that many
bytes of UTF-8 JSON. A message is ``{"type": ..., "session_id": ..., "body": {...}}``.

Roles:

* ``source`` listens, holds every pair's quantum state (states never cross the
  wire) and answers QUBIT_REQUEST with MEASURE_RESULT. It also relays the
  classical messages between the two parties, which is how Alice and Bob
  reach each other with only one connection each.
* ``alice`` / ``bob`` connect to the source, measure ``num_pairs`` qubits,
  then exchange BASIS_ANNOUNCE, CHSH_SAMPLE and a final SIFT_CONFIRM or ABORT.

Message order on each party connection::

    -> HELLO            <- HELLO
    -> QUBIT_REQUEST i  <- MEASURE_RESULT i      (i = 0 .. num_pairs-1)
    -> BASIS_ANNOUNCE   <- BASIS_ANNOUNCE (peer's)
    -> CHSH_SAMPLE      <- CHSH_SAMPLE (peer's)
    -> SIFT_CONFIRM|ABORT  <- SIFT_CONFIRM|ABORT (peer's)

Per-round randomness comes from :func:`e91chaos.e91.round_uniforms`, so a
session over sockets reproduces :func:`e91chaos.e91.run_session` exactly when
seeded the same way.
"""
from __future__ import annotations

import json
import logging
import multiprocessing as mp
import socket
import struct
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

from .e91 import (
    ALICE_ANGLES,
    ALICE_BASIS,
    BOB_ANGLES,
    BOB_BASIS,
    CHSH_PAIRS,
    ChshReport,
    InsufficientCounts,
    RoundRecord,
    SessionConfig,
    SessionTranscript,
    chsh_from_samples,
    detect_eavesdropper,
    disclosed_samples,
    is_sifted,
    measure_pair,
    pick_basis,
    round_uniforms,
)

__all__ = [
    "AbortedByPeer",
    "Connection",
    "FrameError",
    "MAX_FRAME",
    "MalformedJson",
    "Message",
    "MessageType",
    "OversizeFrame",
    "PartyResult",
    "ProtocolViolation",
    "SessionAborted",
    "SourceResult",
    "TruncatedFrame",
    "decode_frame",
    "encode_frame",
    "pack_frame",
    "parse_endpoint",
    "run_loopback",
    "run_two_party_session",
    "unpack_frame",
]

log = logging.getLogger(__name__)

MAX_FRAME = 16 * 1024 * 1024
_HEADER = struct.Struct(">I")

CHSH_FAILURE = "CHSH_FAILURE"
LENGTH_MISMATCH = "LENGTH_MISMATCH"
PROTOCOL_VIOLATION = "PROTOCOL_VIOLATION"
REQUEST_WINDOW = 64


class FrameError(ValueError):
    pass


class OversizeFrame(FrameError):
    pass


class TruncatedFrame(FrameError):
    pass


class MalformedJson(FrameError):
    pass


class ProtocolViolation(RuntimeError):
    pass


class SessionAborted(RuntimeError):
    def __init__(self, reason: str, s_value: Optional[float] = None):
        super().__init__(reason, s_value)
        self.reason = reason
        self.s_value = s_value

    def __str__(self):
        s = "" if self.s_value is None else f" (S={self.s_value:.4f})"
        return f"session aborted: {self.reason}{s}"


class AbortedByPeer(SessionAborted):
    def __str__(self):
        return "peer " + super().__str__()


class MessageType(str, Enum):
    HELLO = "HELLO"
    QUBIT_REQUEST = "QUBIT_REQUEST"
    MEASURE_RESULT = "MEASURE_RESULT"
    BASIS_ANNOUNCE = "BASIS_ANNOUNCE"
    SIFT_CONFIRM = "SIFT_CONFIRM"
    CHSH_SAMPLE = "CHSH_SAMPLE"
    ABORT = "ABORT"


@dataclass(frozen=True)
class Message:
    type: MessageType
    session_id: str
    body: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {"type": self.type.value, "session_id": self.session_id, "body": self.body},
            separators=(",", ":"),
            ensure_ascii=False,
        )

    @classmethod
    def from_json(cls, text: Union[str, bytes]) -> "Message":
        try:
            d = json.loads(text)
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise MalformedJson(str(exc)) from None
        if not isinstance(d, dict) or not isinstance(d.get("session_id"), str) or not isinstance(d.get("body"), dict):
            raise MalformedJson("message must be an object with type, session_id and body")
        try:
            kind = MessageType(d.get("type"))
        except ValueError:
            raise MalformedJson(f"unknown message type {d.get('type')!r}") from None
        return cls(kind, d["session_id"], d["body"])


def pack_frame(payload: bytes) -> bytes:
    if len(payload) > MAX_FRAME:
        raise OversizeFrame(f"payload of {len(payload)} bytes exceeds {MAX_FRAME}")
    return _HEADER.pack(len(payload)) + payload


def unpack_frame(buf: bytes) -> tuple[bytes, int]:
    """Split one frame off ``buf``; returns (payload, bytes consumed)."""
    if len(buf) < _HEADER.size:
        raise TruncatedFrame("incomplete length prefix")
    (length,) = _HEADER.unpack_from(buf)
    if length > MAX_FRAME:
        raise OversizeFrame(f"frame announces {length} bytes, limit is {MAX_FRAME}")
    end = _HEADER.size + length
    if len(buf) < end:
        raise TruncatedFrame(f"frame announces {length} bytes, {len(buf) - _HEADER.size} present")
    return bytes(buf[_HEADER.size:end]), end


def encode_frame(message: Message) -> bytes:
    return pack_frame(message.to_json().encode("utf-8"))


def decode_frame(buf: bytes) -> tuple[Message, int]:
    payload, used = unpack_frame(buf)
    return Message.from_json(payload), used


class Connection:
    """Blocking framed-message connection over a stream socket."""

    def __init__(self, sock: socket.socket, record: Optional[list] = None):
        self.sock = sock
        if sock.family in (socket.AF_INET, socket.AF_INET6):
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._reader = sock.makefile("rb")
        self.record = record

    def send(self, message: Message) -> None:
        self.sock.sendall(encode_frame(message))
        if self.record is not None:
            self.record.append(("sent", message))

    def recv(self) -> Message:
        head = self._reader.read(_HEADER.size)
        if not head:
            raise ProtocolViolation("peer closed the connection")
        if len(head) < _HEADER.size:
            raise TruncatedFrame("connection closed inside a length prefix")
        (length,) = _HEADER.unpack(head)
        if length > MAX_FRAME:
            raise OversizeFrame(f"frame announces {length} bytes, limit is {MAX_FRAME}")
        payload = self._reader.read(length)
        if len(payload) < length:
            raise TruncatedFrame(f"frame announces {length} bytes, {len(payload)} arrived")
        message = Message.from_json(payload)
        if self.record is not None:
            self.record.append(("recv", message))
        return message

    def expect(self, *types: MessageType) -> Message:
        message = self.recv()
        if message.type is MessageType.ABORT and MessageType.ABORT not in types:
            raise AbortedByPeer(message.body.get("reason", "UNKNOWN"), message.body.get("s_value"))
        if message.type not in types:
            wanted = "/".join(t.value for t in types)
            raise ProtocolViolation(f"expected {wanted}, got {message.type.value}")
        return message

    def close(self) -> None:
        try:
            self._reader.close()
        finally:
            self.sock.close()


def parse_endpoint(endpoint: str) -> tuple[str, int]:
    host, sep, port = endpoint.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"endpoint must be host:port, got {endpoint!r}")
    return host or "127.0.0.1", int(port)


def _connect(endpoint: str, timeout: float) -> socket.socket:
    host, port = parse_endpoint(endpoint)
    deadline = time.monotonic() + timeout
    while True:
        try:
            sock = socket.create_connection((host, port), timeout=timeout)
            sock.settimeout(timeout)
            return sock
        except (ConnectionRefusedError, OSError):
            if time.monotonic() > deadline:
                raise
            time.sleep(0.02)


@dataclass
class PartyResult:
    role: str
    session_id: str
    bases: list[int]
    bits: list[int]
    sifted_key: str
    report: ChshReport


@dataclass
class SourceResult:
    session_id: str
    transcript: SessionTranscript
    verdicts: dict[str, dict]
    relayed: list[Message]


def _field(body: dict, name: str, kind=int):
    try:
        value = body[name]
    except KeyError:
        raise ProtocolViolation(f"message body lacks {name!r}") from None
    if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
        raise ProtocolViolation(f"{name!r} has the wrong type")
    return value


def _run_party(role: str, conn: Connection, config: SessionConfig, threshold: float) -> PartyResult:
    own_slot, own_angles = (ALICE_BASIS, ALICE_ANGLES) if role == "alice" else (BOB_BASIS, BOB_ANGLES)
    n = config.num_pairs

    conn.send(Message(MessageType.HELLO, "", {
        "role": role,
        "num_pairs": n,
        "rng_seed": config.rng_seed,
        "threshold": threshold,
    }))
    hello = conn.expect(MessageType.HELLO)
    sid = hello.session_id

    bases, bits = [], []
    for i in range(n):
        # keep up to REQUEST_WINDOW requests in flight; order is unchanged
        while len(bases) < n and len(bases) < i + REQUEST_WINDOW:
            j = len(bases)
            bases.append(pick_basis(round_uniforms(config.rng_seed, j)[own_slot]))
            conn.send(Message(MessageType.QUBIT_REQUEST, sid, {"round": j, "basis": bases[j]}))
        reply = conn.expect(MessageType.MEASURE_RESULT)
        if _field(reply.body, "round") != i:
            raise ProtocolViolation(f"MEASURE_RESULT for round {reply.body['round']}, expected {i}")
        bit = _field(reply.body, "bit")
        if bit not in (0, 1):
            raise ProtocolViolation("measurement bit must be 0 or 1")
        bits.append(bit)

    conn.send(Message(MessageType.BASIS_ANNOUNCE, sid, {"bases": bases}))
    peer_bases = _field(conn.expect(MessageType.BASIS_ANNOUNCE).body, "bases", list)
    if len(peer_bases) != n or any(b not in (1, 2, 3) for b in peer_bases):
        raise ProtocolViolation("peer announced a malformed basis list")
    alice_bases, bob_bases = (bases, peer_bases) if role == "alice" else (peer_bases, bases)

    sifted = "".join("01"[bits[i]] for i in range(n) if is_sifted(alice_bases[i], bob_bases[i]))

    mine = disclosed_samples(alice_bases, bob_bases, bits)
    conn.send(Message(MessageType.CHSH_SAMPLE, sid, {"outcomes": {str(i): b for i, b in mine.items()}}))
    theirs = _field(conn.expect(MessageType.CHSH_SAMPLE).body, "outcomes", dict)
    if set(theirs) != {str(i) for i in mine}:
        raise ProtocolViolation("peer disclosed outcomes for the wrong rounds")
    theirs = {int(k): v for k, v in theirs.items()}
    alice_bits, bob_bits = (mine, theirs) if role == "alice" else (theirs, mine)
    try:
        report = chsh_from_samples(
            (alice_bases[i], bob_bases[i], alice_bits[i], bob_bits[i]) for i in sorted(mine)
        )
    except InsufficientCounts:
        report = None

    if report is None or detect_eavesdropper(report, threshold):
        s = None if report is None else report.s_value
        conn.send(Message(MessageType.ABORT, sid, {"reason": CHSH_FAILURE, "s_value": s}))
        conn.expect(MessageType.SIFT_CONFIRM, MessageType.ABORT)
        raise SessionAborted(CHSH_FAILURE, s)

    conn.send(Message(MessageType.SIFT_CONFIRM, sid, {"key_length": len(sifted), "s_value": report.s_value}))
    final = conn.expect(MessageType.SIFT_CONFIRM)
    if _field(final.body, "key_length") != len(sifted):
        raise SessionAborted(LENGTH_MISMATCH, report.s_value)
    return PartyResult(role, sid, bases, bits, sifted, report)


def _source_hello(conns: list[Connection], config: SessionConfig) -> tuple[str, dict[str, Connection]]:
    by_role: dict[str, Connection] = {}
    params = None
    for conn in conns:
        hello = conn.expect(MessageType.HELLO)
        role = hello.body.get("role")
        if role not in ("alice", "bob") or role in by_role:
            raise ProtocolViolation(f"unexpected or duplicate role {role!r}")
        by_role[role] = conn
        p = (hello.body.get("num_pairs"), hello.body.get("rng_seed"))
        if p != (config.num_pairs, config.rng_seed):
            raise ProtocolViolation(f"{role} asked for num_pairs/seed {p}, source runs {config.num_pairs}/{config.rng_seed}")
        if params is not None and hello.body.get("threshold") != params:
            raise ProtocolViolation("parties disagree on the detection threshold")
        params = hello.body.get("threshold")
    sid = f"e91-{config.rng_seed:016x}-{config.num_pairs}"
    for conn in by_role.values():
        conn.send(Message(MessageType.HELLO, sid, {
            "num_pairs": config.num_pairs, "rng_seed": config.rng_seed, "threshold": params,
        }))
    return sid, by_role


def _serve_source(conns: list[Connection], config: SessionConfig) -> SourceResult:
    sid, by_role = _source_hello(conns, config)
    alice, bob = by_role["alice"], by_role["bob"]
    rounds = []
    for i in range(config.num_pairs):
        req_a = alice.expect(MessageType.QUBIT_REQUEST)
        req_b = bob.expect(MessageType.QUBIT_REQUEST)
        for req in (req_a, req_b):
            if _field(req.body, "round") != i or _field(req.body, "basis") not in (1, 2, 3):
                raise ProtocolViolation(f"bad QUBIT_REQUEST for round {i}: {req.body}")
        ia, ib = req_a.body["basis"], req_b.body["basis"]
        u = round_uniforms(config.rng_seed, i)
        a, b, eve_bit, eve_basis = measure_pair(ALICE_ANGLES[ia], BOB_ANGLES[ib], config.eve, u)
        rounds.append(RoundRecord(ia, ib, a, b, eve_bit, eve_basis))
        alice.send(Message(MessageType.MEASURE_RESULT, sid, {"round": i, "bit": a}))
        bob.send(Message(MessageType.MEASURE_RESULT, sid, {"round": i, "bit": b}))

    relayed = []
    finals = {}
    for phase in ((MessageType.BASIS_ANNOUNCE,), (MessageType.CHSH_SAMPLE,),
                  (MessageType.SIFT_CONFIRM, MessageType.ABORT)):
        msg_a = alice.expect(*phase)
        msg_b = bob.expect(*phase)
        bob.send(msg_a)
        alice.send(msg_b)
        relayed += [msg_a, msg_b]
        finals = {"alice": msg_a, "bob": msg_b}
    verdicts = {role: {"type": m.type.value, **m.body} for role, m in finals.items()}
    return SourceResult(sid, SessionTranscript(config, tuple(rounds)), verdicts, relayed)


def open_listener(endpoint: str) -> socket.socket:
    host, port = parse_endpoint(endpoint)
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    sock.bind((host, port))
    sock.listen(2)
    return sock


def run_source(listener: socket.socket, config: SessionConfig, timeout: float = 60.0) -> SourceResult:
    listener.settimeout(timeout)
    conns = []
    try:
        for _ in range(2):
            sock, _addr = listener.accept()
            sock.settimeout(timeout)
            conns.append(Connection(sock))
        try:
            return _serve_source(conns, config)
        except ProtocolViolation as exc:
            for conn in conns:
                try:
                    conn.send(Message(MessageType.ABORT, "", {"reason": PROTOCOL_VIOLATION, "detail": str(exc)}))
                except OSError:
                    pass
            raise
    finally:
        for conn in conns:
            conn.close()


def run_two_party_session(
    role: str,
    endpoint: str,
    config: SessionConfig,
    threshold: float = 2.0,
    timeout: float = 60.0,
) -> Union[PartyResult, SourceResult]:
    """Run one role of a networked session.

    ``source`` binds ``endpoint`` and returns the full transcript it observed;
    ``alice`` and ``bob`` connect to it and return their own fragment. Raises
    SessionAborted (or AbortedByPeer) when the CHSH test fails.
    """
    if role == "source":
        listener = open_listener(endpoint)
        try:
            return run_source(listener, config, timeout)
        finally:
            listener.close()
    if role not in ("alice", "bob"):
        raise ValueError(f"role must be alice, bob or source, got {role!r}")
    conn = Connection(_connect(endpoint, timeout))
    try:
        return _run_party(role, conn, config, threshold)
    finally:
        conn.close()


def _source_main(config, endpoint, timeout, port_q, result_q):
    try:
        listener = open_listener(endpoint)
        port_q.put(listener.getsockname()[1])
        try:
            result_q.put(("source", run_source(listener, config, timeout)))
        finally:
            listener.close()
    except Exception as exc:  # forwarded to the parent
        port_q.put(None)
        result_q.put(("source", exc))


def _party_main(role, endpoint, config, threshold, timeout, result_q):
    try:
        result_q.put((role, run_two_party_session(role, endpoint, config, threshold, timeout)))
    except Exception as exc:
        result_q.put((role, exc))


def _await(queue, proc, timeout):
    deadline = time.monotonic() + timeout
    while True:
        try:
            return queue.get(timeout=0.1)
        except Exception:
            if proc is not None and not proc.is_alive() and queue.empty():
                raise RuntimeError(f"{proc.name} exited with code {proc.exitcode}") from None
            if time.monotonic() > deadline:
                raise TimeoutError("loopback session timed out") from None


@dataclass
class LoopbackResult:
    source: Union[SourceResult, Exception]
    alice: Union[PartyResult, Exception]
    bob: Union[PartyResult, Exception]


def run_loopback(
    config: SessionConfig,
    threshold: float = 2.0,
    timeout: float = 60.0,
    endpoint: str = "127.0.0.1:0",
) -> LoopbackResult:
    """Run source and Bob in child processes and Alice here.

    The source binds ``endpoint`` (port 0 picks a free port). Outcomes that are
    exceptions (e.g. SessionAborted) are returned, not raised.
    """
    ctx = mp.get_context("spawn")
    port_q, result_q = ctx.Queue(), ctx.Queue()
    source = ctx.Process(target=_source_main, args=(config, endpoint, timeout, port_q, result_q), daemon=True)
    source.start()
    port = _await(port_q, source, timeout)
    if port is None:
        source.join()
        return LoopbackResult(result_q.get()[1], RuntimeError("source failed"), RuntimeError("source failed"))
    endpoint = f"{parse_endpoint(endpoint)[0]}:{port}"
    bob = ctx.Process(target=_party_main, args=("bob", endpoint, config, threshold, timeout, result_q), daemon=True)
    bob.start()
    try:
        results = {"alice": run_two_party_session("alice", endpoint, config, threshold, timeout)}
    except Exception as exc:
        results = {"alice": exc}
    for _ in range(2):
        role, value = _await(result_q, None, timeout)
        results[role] = value
    source.join(timeout)
    bob.join(timeout)
    return LoopbackResult(results["source"], results["alice"], results["bob"])
