"""Two-node harness: Alice and Bob reconcile QBER over the classical channel.

Both nodes derive their view of the session from the same seeded
:class:`~polqkd.protocol.SessionConfig`; Alice keeps only her key and Bob
only his decisions.  They can share one process (in-memory queues) or run
as two OS processes talking over a local TCP socket.
"""

from __future__ import annotations

import multiprocessing as mp
import queue
import socket
import threading
from dataclasses import dataclass

from polqkd.channel import (
    DEFAULT_TIMEOUT_S,
    AliceEndpoint,
    BobEndpoint,
    SocketTransport,
    memory_pair,
)
from polqkd.errors import InvalidParameter, ProtocolAbort
from polqkd.protocol import SessionConfig, run_session


@dataclass
class TwoNodeResult:
    errors: int
    compared: int
    alice_frames: list
    bob_frames: list

    @property
    def qber(self):
        return self.errors / self.compared if self.compared else None


def _chunks(indices, size):
    return [indices[i:i + size] for i in range(0, len(indices), size)]


def _alice_main(alice: AliceEndpoint):
    alice.open()
    alice.serve()
    return alice


def _bob_main(bob: BobEndpoint, indices, chunk_size):
    bob.open()
    for chunk in _chunks(indices, chunk_size):
        bob.request_round(chunk)
    bob.close()
    return bob


def _alice_process(config, host, port, session_id, timeout, port_q, result_q):
    alice_key = run_session(config).alice_key
    with socket.create_server((host, port)) as srv:
        srv.settimeout(timeout)
        port_q.put(srv.getsockname()[1])
        try:
            conn, _ = srv.accept()
        except socket.timeout:
            result_q.put(("error", "no connection"))
            return
    alice = AliceEndpoint(alice_key, SocketTransport(conn), session_id, timeout=timeout)
    try:
        _alice_main(alice)
        total = alice.total
        result_q.put(("ok", total.errors, total.compared, alice.frames("tx")))
    except ProtocolAbort as exc:
        result_q.put(("abort", exc.reason))
    finally:
        conn.close()


def _get(q, proc, timeout):
    """Read from ``q`` but fail fast if ``proc`` dies without answering."""
    waited = 0.0
    while True:
        try:
            return q.get(timeout=0.2)
        except queue.Empty:
            waited += 0.2
            if not proc.is_alive() or waited >= timeout:
                raise ProtocolAbort("alice process did not respond", remote=True) from None


def run_two_node(config: SessionConfig = SessionConfig(), transport: str = "memory",
                 host: str = "127.0.0.1", port: int = 0, chunk_size: int = 30,
                 timeout: float = DEFAULT_TIMEOUT_S) -> TwoNodeResult:
    """Simulate a session, then reveal its QBER sample over the classical channel.

    ``port=0`` picks a free port.  Raises :class:`ProtocolAbort` if either
    side aborts.
    """
    if chunk_size < 1:
        raise InvalidParameter("chunk_size must be >= 1")
    report = run_session(config)
    indices = report.revealed_indices
    session_id = config.seed

    if transport == "memory":
        a_end, b_end = memory_pair()
        alice = AliceEndpoint(report.alice_key, a_end, session_id, timeout=timeout)
        bob = BobEndpoint(report.bob_key, b_end, session_id, timeout=timeout)
        err = {}

        def run_alice():
            try:
                _alice_main(alice)
            except ProtocolAbort as exc:
                err["alice"] = exc

        t = threading.Thread(target=run_alice, daemon=True)
        t.start()
        _bob_main(bob, indices, chunk_size)
        t.join(timeout + 1.0)
        if "alice" in err:
            raise err["alice"]
        a_total = alice.total
        b_total = bob.total
        if (a_total.errors, a_total.compared) != (b_total.errors, b_total.compared):
            raise ProtocolAbort("endpoints disagree on QBER")
        return TwoNodeResult(b_total.errors, b_total.compared, alice.frames("tx"), bob.frames("tx"))

    if transport != "socket":
        raise InvalidParameter(f"transport must be 'memory' or 'socket', got {transport!r}")

    ctx = mp.get_context("spawn")
    port_q, result_q = ctx.Queue(), ctx.Queue()
    proc = ctx.Process(
        target=_alice_process, args=(config, host, port, session_id, timeout, port_q, result_q)
    )
    proc.start()
    try:
        bound = _get(port_q, proc, 60)
        sock = socket.create_connection((host, bound), timeout=timeout)
        bob = BobEndpoint(report.bob_key, SocketTransport(sock), session_id, timeout=timeout)
        try:
            _bob_main(bob, indices, chunk_size)
        finally:
            sock.close()
        status = _get(result_q, proc, 60)
    finally:
        proc.join(60)
        if proc.is_alive():
            proc.terminate()
    if status[0] != "ok":
        raise ProtocolAbort(f"alice: {status[1]}", remote=True)
    _, errors, compared, alice_frames = status
    b_total = bob.total
    if (errors, compared) != (b_total.errors, b_total.compared):
        raise ProtocolAbort("endpoints disagree on QBER")
    return TwoNodeResult(errors, compared, alice_frames, bob.frames("tx"))
