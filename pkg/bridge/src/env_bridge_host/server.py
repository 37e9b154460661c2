"""Server side of the newline-delimited JSON environment protocol.

One connection is served at a time; each connection sees one immutable spec.
Requests are single JSON objects per line:

    {"cmd": "spec"}
    {"cmd": "reset", "seed": <int>}
    {"cmd": "step", "action": [<float>, ...]}
    {"cmd": "close"}

Replies mirror the command: the spec message, {"state": [...]}, or
{"state": [...], "reward": r, "terminal": bool} with an extra
``"clipped": true`` field when the incoming action had to be clipped to the
bounds. A malformed JSON line gets {"error": ...} and the connection is
closed; a simulator exception gets an error reply carrying the traceback and
the connection stays open.
"""

from __future__ import annotations

import json
import socket
import traceback

from .adapters import HostedEnv, resolve

DEFAULT_PORT = 7720


def _handle_message(hosted: HostedEnv, msg: dict) -> dict | None:
    """Returns the reply dict, or None for an orderly close."""
    cmd = msg.get("cmd")
    if cmd == "spec":
        return hosted.spec_message()
    if cmd == "reset":
        seed = msg.get("seed")
        state = hosted.reset(None if seed is None else int(seed))
        return {"state": state.tolist()}
    if cmd == "step":
        state, reward, terminal, clipped = hosted.step(msg["action"])
        reply = {"state": state.tolist(), "reward": reward, "terminal": terminal}
        if clipped:
            reply["clipped"] = True
        return reply
    if cmd == "close":
        return None
    return {"error": f"unknown command {cmd!r}"}


def serve_connection(hosted: HostedEnv, conn: socket.socket) -> None:
    """Answer protocol messages on one connection until it closes."""
    with conn, conn.makefile("rwb") as stream:
        while True:
            line = stream.readline()
            if not line:
                return
            try:
                msg = json.loads(line)
            except json.JSONDecodeError:
                stream.write((json.dumps(
                    {"error": f"malformed JSON line: {line[:100].decode(errors='replace')!r}"}
                ) + "\n").encode())
                stream.flush()
                return
            try:
                reply = _handle_message(hosted, msg)
            except Exception:
                reply = {"error": traceback.format_exc()}
            if reply is None:
                return
            stream.write((json.dumps(reply) + "\n").encode())
            stream.flush()


def serve(env_id: str, port: int = DEFAULT_PORT, host: str = "127.0.0.1",
          ready_callback=None, max_connections: int | None = None) -> None:
    """Host ``env_id`` on ``port``, serving one connection at a time.

    Runs until interrupted, or until ``max_connections`` connections have been
    served (used by tests). ``ready_callback(bound_port)`` fires once the
    listening socket is up, so callers can bind port 0 and discover the port.
    """
    hosted = resolve(env_id)
    with socket.create_server((host, port)) as server:
        if ready_callback is not None:
            ready_callback(server.getsockname()[1])
        served = 0
        while max_connections is None or served < max_connections:
            conn, _ = server.accept()
            serve_connection(hosted, conn)
            served += 1
