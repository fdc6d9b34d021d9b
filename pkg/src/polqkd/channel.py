"""Classical channel between Alice and Bob.

Frames are single ASCII lines::

    KIND|session_id|sequence|payload_hex\\n

``session_id`` and ``sequence`` are unsigned decimals without leading
zeros, ``payload_hex`` is the lowercase hex of the kind's payload
(all integers big-endian):

===============  ==================================================
HELLO, END       empty
START            u64 number of cycles
CHUNK_REQUEST    u32 count, then count x u32 bit indices
CHUNK_REVEAL     u32 count, then ceil(count/8) bytes of bits packed
                 MSB first, zero padded
QBER_REPORT      u32 errors, u32 compared
ABORT            UTF-8 reason
===============  ==================================================

The channel is assumed authentic; nothing here authenticates or encrypts.
"""

from __future__ import annotations

import enum
import queue
import socket
import struct
import threading
from dataclasses import dataclass, field
from typing import Optional, Sequence

from polqkd.errors import InvalidParameter, ProtocolAbort

DEFAULT_TIMEOUT_S = 5.0
U32_MAX = 2**32 - 1
U64_MAX = 2**64 - 1


class FrameError(ValueError):
    """A byte frame does not decode to a valid message."""


class Kind(enum.Enum):
    HELLO = "HELLO"
    START = "START"
    CHUNK_REQUEST = "CHUNK_REQUEST"
    CHUNK_REVEAL = "CHUNK_REVEAL"
    QBER_REPORT = "QBER_REPORT"
    END = "END"
    ABORT = "ABORT"


@dataclass(frozen=True)
class Message:
    kind: Kind
    session_id: int
    sequence: int
    indices: tuple = ()
    bits: tuple = ()
    n_cycles: int = 0
    errors: int = 0
    compared: int = 0
    reason: str = ""

    def __post_init__(self):
        if not 0 <= self.session_id <= U64_MAX:
            raise InvalidParameter("session_id must fit in u64")
        if self.sequence < 0:
            raise InvalidParameter("sequence must be >= 0")
        k = self.kind
        if self.indices and k is not Kind.CHUNK_REQUEST:
            raise InvalidParameter(f"{k.name} carries no indices")
        if self.bits and k is not Kind.CHUNK_REVEAL:
            raise InvalidParameter(f"{k.name} carries no bits")
        if self.n_cycles and k is not Kind.START:
            raise InvalidParameter(f"{k.name} carries no cycle count")
        if (self.errors or self.compared) and k is not Kind.QBER_REPORT:
            raise InvalidParameter(f"{k.name} carries no QBER")
        if self.reason and k is not Kind.ABORT:
            raise InvalidParameter(f"{k.name} carries no reason")
        if any(not 0 <= i <= U32_MAX for i in self.indices):
            raise InvalidParameter("indices must fit in u32")
        if any(b not in (0, 1) for b in self.bits):
            raise InvalidParameter("bits must be 0 or 1")
        if not 0 <= self.errors <= self.compared <= U32_MAX:
            raise InvalidParameter("need 0 <= errors <= compared < 2**32")
        if not 0 <= self.n_cycles <= U64_MAX:
            raise InvalidParameter("n_cycles must fit in u64")

    @property
    def qber(self) -> Optional[float]:
        return self.errors / self.compared if self.compared else None


def pack_bits(bits: Sequence[int]) -> bytes:
    out = bytearray((len(bits) + 7) // 8)
    for i, b in enumerate(bits):
        if b:
            out[i // 8] |= 0x80 >> (i % 8)
    return bytes(out)


def unpack_bits(data: bytes, n: int) -> tuple:
    if len(data) != (n + 7) // 8:
        raise FrameError(f"expected {(n + 7) // 8} bytes for {n} bits, got {len(data)}")
    bits = tuple((data[i // 8] >> (7 - i % 8)) & 1 for i in range(n))
    if n % 8 and data[-1] & (0xFF >> (n % 8)):
        raise FrameError("nonzero padding bits")
    return bits


def _payload(msg: Message) -> bytes:
    k = msg.kind
    if k is Kind.START:
        return struct.pack(">Q", msg.n_cycles)
    if k is Kind.CHUNK_REQUEST:
        return struct.pack(f">I{len(msg.indices)}I", len(msg.indices), *msg.indices)
    if k is Kind.CHUNK_REVEAL:
        return struct.pack(">I", len(msg.bits)) + pack_bits(msg.bits)
    if k is Kind.QBER_REPORT:
        return struct.pack(">II", msg.errors, msg.compared)
    if k is Kind.ABORT:
        return msg.reason.encode("utf-8")
    return b""


def encode_message(msg: Message) -> bytes:
    return f"{msg.kind.value}|{msg.session_id}|{msg.sequence}|{_payload(msg).hex()}\n".encode("ascii")


def _decimal(field_: str, what: str) -> int:
    if not field_.isdigit() or not field_.isascii() or (len(field_) > 1 and field_[0] == "0"):
        raise FrameError(f"bad {what}: {field_!r}")
    return int(field_)


def decode_message(frame: bytes) -> Message:
    try:
        text = frame.decode("ascii")
    except UnicodeDecodeError as exc:
        raise FrameError("frame is not ASCII") from exc
    if not text.endswith("\n") or "\n" in text[:-1]:
        raise FrameError("frame must be exactly one newline-terminated line")
    parts = text[:-1].split("|")
    if len(parts) != 4:
        raise FrameError(f"expected 4 fields, got {len(parts)}")
    name, sid, seq, hexpart = parts
    try:
        kind = Kind(name)
    except ValueError as exc:
        raise FrameError(f"unknown kind {name!r}") from exc
    if hexpart != hexpart.lower() or len(hexpart) % 2:
        raise FrameError("payload must be lowercase hex of whole bytes")
    try:
        payload = bytes.fromhex(hexpart)
    except ValueError as exc:
        raise FrameError("payload is not hex") from exc
    fields = {}
    try:
        if kind is Kind.START:
            (fields["n_cycles"],) = struct.unpack(">Q", payload)
        elif kind is Kind.CHUNK_REQUEST:
            (n,) = struct.unpack_from(">I", payload)
            if len(payload) != 4 + 4 * n:
                raise FrameError("index list length mismatch")
            fields["indices"] = struct.unpack_from(f">{n}I", payload, 4)
        elif kind is Kind.CHUNK_REVEAL:
            (n,) = struct.unpack_from(">I", payload)
            fields["bits"] = unpack_bits(payload[4:], n)
        elif kind is Kind.QBER_REPORT:
            fields["errors"], fields["compared"] = struct.unpack(">II", payload)
        elif kind is Kind.ABORT:
            fields["reason"] = payload.decode("utf-8")
        elif payload:
            raise FrameError(f"{kind.name} takes no payload")
    except (struct.error, UnicodeDecodeError) as exc:
        raise FrameError(f"bad {kind.name} payload") from exc
    try:
        return Message(kind, _decimal(sid, "session id"), _decimal(seq, "sequence"), **fields)
    except InvalidParameter as exc:
        raise FrameError(str(exc)) from exc


# -- transports -------------------------------------------------------------

class MemoryTransport:
    """One end of an in-process, in-order frame pipe."""

    def __init__(self, inbox: queue.Queue, outbox: queue.Queue):
        self.inbox = inbox
        self.outbox = outbox

    def send(self, frame: bytes) -> None:
        self.outbox.put(frame)

    def recv(self, timeout: float) -> bytes:
        try:
            return self.inbox.get(timeout=timeout)
        except queue.Empty:
            raise TimeoutError from None

    def close(self) -> None:
        pass


def memory_pair():
    a, b = queue.Queue(), queue.Queue()
    return MemoryTransport(a, b), MemoryTransport(b, a)


class SocketTransport:
    """Newline-framed transport over a connected stream socket."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self._buf = b""

    def send(self, frame: bytes) -> None:
        self.sock.sendall(frame)

    def recv(self, timeout: float) -> bytes:
        self.sock.settimeout(timeout)
        while b"\n" not in self._buf:
            try:
                chunk = self.sock.recv(65536)
            except socket.timeout:
                raise TimeoutError from None
            if not chunk:
                raise ConnectionError("peer closed the connection")
            self._buf += chunk
        line, _, self._buf = self._buf.partition(b"\n")
        return line + b"\n"

    def close(self) -> None:
        self.sock.close()


class DroppingTransport:
    """Test wrapper that silently discards chosen outgoing frames (0-based)."""

    def __init__(self, inner, drop: Sequence[int]):
        self.inner = inner
        self.drop = set(drop)
        self.sent = 0

    def send(self, frame: bytes) -> None:
        if self.sent not in self.drop:
            self.inner.send(frame)
        self.sent += 1

    def recv(self, timeout: float) -> bytes:
        return self.inner.recv(timeout)

    def close(self) -> None:
        self.inner.close()


# -- endpoints --------------------------------------------------------------

class State(enum.Enum):
    IDLE = "IDLE"
    RUNNING = "RUNNING"
    ENDED = "ENDED"
    ABORTED = "ABORTED"


@dataclass
class QberRound:
    indices: tuple
    errors: int
    compared: int

    @property
    def qber(self) -> Optional[float]:
        return self.errors / self.compared if self.compared else None


@dataclass
class _Endpoint:
    transport: object
    session_id: int
    timeout: float = DEFAULT_TIMEOUT_S
    state: State = State.IDLE
    transcript: list = field(default_factory=list)
    rounds: list = field(default_factory=list)
    revealed: set = field(default_factory=set)
    abort_reason: Optional[str] = None
    _send_seq: int = 0
    _recv_seq: int = 0

    def _send(self, kind: Kind, **payload) -> None:
        frame = encode_message(Message(kind, self.session_id, self._send_seq, **payload))
        self._send_seq += 1
        self.transcript.append(("tx", frame))
        self.transport.send(frame)

    def abort(self, reason: str):
        if self.state is not State.ABORTED:
            self.state = State.ABORTED
            self.abort_reason = reason
            try:
                self._send(Kind.ABORT, reason=reason)
            except OSError:
                pass
        raise ProtocolAbort(reason)

    def _recv(self, *expected: Kind) -> Message:
        try:
            frame = self.transport.recv(self.timeout)
        except TimeoutError:
            self.abort(f"timeout after {self.timeout} s")
        except (ConnectionError, OSError) as exc:
            self.abort(f"transport failure: {exc}")
        self.transcript.append(("rx", frame))
        try:
            msg = decode_message(frame)
        except FrameError as exc:
            self.abort(f"malformed frame: {exc}")
        if msg.session_id != self.session_id:
            self.abort(f"session id {msg.session_id} != {self.session_id}")
        if msg.sequence != self._recv_seq:
            self.abort(f"sequence gap: expected {self._recv_seq}, got {msg.sequence}")
        self._recv_seq += 1
        if msg.kind is Kind.ABORT:
            self.state = State.ABORTED
            self.abort_reason = msg.reason
            raise ProtocolAbort(msg.reason, remote=True)
        if msg.kind not in expected:
            self.abort(f"unexpected {msg.kind.name}")
        return msg

    @property
    def total(self) -> QberRound:
        idx = tuple(i for r in self.rounds for i in r.indices)
        return QberRound(idx, sum(r.errors for r in self.rounds), sum(r.compared for r in self.rounds))

    def frames(self, direction: str = "tx") -> list:
        return [f for d, f in self.transcript if d == direction]


class AliceEndpoint(_Endpoint):
    """Sender side: holds the transmitted key and answers chunk requests."""

    def __init__(self, key_bits: Sequence[int], transport, session_id: int, **kw):
        super().__init__(transport, session_id, **kw)
        self.key = [int(b) for b in key_bits]

    def open(self) -> None:
        self._recv(Kind.HELLO)
        self._send(Kind.HELLO)
        start = self._recv(Kind.START)
        if start.n_cycles != len(self.key):
            self.abort(f"START for {start.n_cycles} cycles, key has {len(self.key)}")
        self.state = State.RUNNING

    def serve_round(self, request: Optional[Message] = None) -> QberRound:
        if self.state is not State.RUNNING:
            raise ProtocolAbort(f"endpoint is {self.state.name}")
        if request is None:
            request = self._recv(Kind.CHUNK_REQUEST)
        idx = request.indices
        if any(i >= len(self.key) for i in idx):
            self.abort("requested index out of range")
        mine = tuple(self.key[i] for i in idx)
        self._send(Kind.CHUNK_REVEAL, bits=mine)
        theirs = self._recv(Kind.CHUNK_REVEAL).bits
        if len(theirs) != len(idx):
            self.abort("reveal length does not match request")
        errors = sum(a != b for a, b in zip(mine, theirs))
        self._send(Kind.QBER_REPORT, errors=errors, compared=len(idx))
        peer = self._recv(Kind.QBER_REPORT)
        if (peer.errors, peer.compared) != (errors, len(idx)):
            self.abort("peer QBER disagrees")
        rnd = QberRound(idx, errors, len(idx))
        self.rounds.append(rnd)
        self.revealed.update(idx)
        return rnd

    def serve(self) -> list:
        """Answer requests until Bob sends END."""
        while True:
            msg = self._recv(Kind.CHUNK_REQUEST, Kind.END)
            if msg.kind is Kind.END:
                self.state = State.ENDED
                return self.rounds
            self.serve_round(msg)


class BobEndpoint(_Endpoint):
    """Receiver side: holds the decoded key (``None`` marks an erasure)."""

    def __init__(self, key_bits: Sequence[Optional[int]], transport, session_id: int, **kw):
        super().__init__(transport, session_id, **kw)
        self.key = [None if b is None else int(b) for b in key_bits]

    def open(self) -> None:
        self._send(Kind.HELLO)
        self._recv(Kind.HELLO)
        self._send(Kind.START, n_cycles=len(self.key))
        self.state = State.RUNNING

    def request_round(self, indices: Sequence[int]) -> QberRound:
        if self.state is not State.RUNNING:
            raise ProtocolAbort(f"endpoint is {self.state.name}")
        if any(not 0 <= i < len(self.key) for i in indices):
            raise InvalidParameter("revealed index out of range")
        # erasures carry no bit and are never disclosed
        idx = tuple(int(i) for i in indices if self.key[i] is not None)
        self._send(Kind.CHUNK_REQUEST, indices=idx)
        theirs = self._recv(Kind.CHUNK_REVEAL).bits
        if len(theirs) != len(idx):
            self.abort("reveal length does not match request")
        mine = tuple(self.key[i] for i in idx)
        self._send(Kind.CHUNK_REVEAL, bits=mine)
        peer = self._recv(Kind.QBER_REPORT)
        errors = sum(a != b for a, b in zip(mine, theirs))
        if (peer.errors, peer.compared) != (errors, len(idx)):
            self.abort("peer QBER disagrees")
        self._send(Kind.QBER_REPORT, errors=errors, compared=len(idx))
        rnd = QberRound(idx, errors, len(idx))
        self.rounds.append(rnd)
        self.revealed.update(idx)
        return rnd

    def close(self) -> None:
        self._send(Kind.END)
        self.state = State.ENDED


def exchange_qber_round(alice: AliceEndpoint, bob: BobEndpoint, indices: Sequence[int]) -> tuple:
    """Run one reveal round between two in-process endpoints.

    Alice is served from a helper thread.  Returns ``(alice_round,
    bob_round)``; both carry the same counts unless the exchange aborted,
    in which case :class:`ProtocolAbort` is raised after both ends settle.
    """
    result = {}

    def serve():
        try:
            result["alice"] = alice.serve_round()
        except ProtocolAbort as exc:
            result["alice_err"] = exc

    t = threading.Thread(target=serve, daemon=True)
    t.start()
    try:
        bob_round = bob.request_round(indices)
    except ProtocolAbort:
        t.join(alice.timeout + 1.0)
        raise
    t.join(alice.timeout + 1.0)
    if "alice_err" in result:
        raise result["alice_err"]
    return result["alice"], bob_round
