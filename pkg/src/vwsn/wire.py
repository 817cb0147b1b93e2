"""Platform wire protocols.

Two sensor platforms, two framings:

SPOTSIM (capable nodes) — UTF-8 lines, space separated, LF terminated:

    requests   DEPLOY <slot|-> <base64(manifest)>
               START <slot> | STOP <slot> | DELETE <slot> | STATE <slot>
               MIGOUT <slot>
               MIGIN <slot|-> <base64(manifest)> <base64(state)>
    replies    OK <slot>[ <base64(payload)>]
               ERR <code> <text>     codes: CAPACITY ENERGY BADFRAME
                                            UNSUPPORTED QUEUEFULL NOSLOT
    data       DATA <slot> <seq> <ts_ms> <value> <unit>

``-`` asks the node to pick the slot (DEPLOY always may; MIGIN uses it when
the control plane does not know the free slot indexes).

MOTESIM (constrained nodes, reached via their GTO parent) — binary TLV:
1-byte type, 2-byte big-endian length, payload.

    requests   0x01 DEPLOY (payload = manifest bytes)
               0x02 START | 0x03 STOP | 0x04 DELETE | 0x05 STATE_REQ
    replies    0x81 OK  (payload = slot:1 [+ extra bytes])
               0x82 ERR (payload = code:1 [+ utf-8 text])
    data       0x90 (slot:1, seq:4 BE, ts_ms:8 BE, value:8 IEEE-754 BE,
                     unit:1 enum)

GTO relay framing prefixes any frame with the 1-byte length-prefixed target
node id: ``len(node_id):1 | node_id | frame``. Relay frames are
distinguishable from SPOTSIM text because node ids are short (1..32 bytes)
while text commands start with an uppercase ASCII letter (>= 0x41).
"""

from __future__ import annotations

import base64
import struct
from dataclasses import dataclass

from .errors import BadFrame
from .model import Unit

ERR_CODES = ("CAPACITY", "ENERGY", "BADFRAME", "UNSUPPORTED", "QUEUEFULL", "NOSLOT")

TLV_DEPLOY = 0x01
TLV_START = 0x02
TLV_STOP = 0x03
TLV_DELETE = 0x04
TLV_STATE_REQ = 0x05
TLV_OK = 0x81
TLV_ERR = 0x82
TLV_DATA = 0x90

_TLV_OP = {
    TLV_DEPLOY: "DEPLOY",
    TLV_START: "START",
    TLV_STOP: "STOP",
    TLV_DELETE: "DELETE",
    TLV_STATE_REQ: "STATE",
}
_OP_TLV = {v: k for k, v in _TLV_OP.items()}

_ERR_BYTE = {code: i + 1 for i, code in enumerate(ERR_CODES)}
_BYTE_ERR = {v: k for k, v in _ERR_BYTE.items()}

_UNIT_BYTE = {u: i + 1 for i, u in enumerate(Unit)}
_BYTE_UNIT = {v: k for k, v in _UNIT_BYTE.items()}

MAX_NODE_ID_LEN = 32

OPS = ("DEPLOY", "START", "STOP", "DELETE", "STATE", "MIGOUT", "MIGIN")


@dataclass(frozen=True)
class Command:
    """Decoded platform command. slot None means 'node picks'."""

    op: str
    slot: int | None = None
    manifest: bytes | None = None
    state: bytes | None = None


@dataclass(frozen=True)
class Reply:
    ok: bool
    slot: int = 0
    payload: bytes | None = None
    err_code: str | None = None
    err_text: str = ""


@dataclass(frozen=True)
class DataMessage:
    vs_slot: int
    seq: int
    ts_ms: int
    value: float
    unit: Unit


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def _unb64(text: str) -> bytes:
    try:
        return base64.b64decode(text.encode("ascii"), validate=True)
    except Exception as e:  # noqa: BLE001
        raise BadFrame(f"bad base64 field: {e}") from None


def format_value(v: float) -> str:
    if v == int(v) and abs(v) < 2**53:
        return f"{int(v)}.0"
    return repr(float(v))


class SpotsimCodec:
    """Text-line protocol used by capable nodes."""

    platform = "SPOTSIM"

    @staticmethod
    def encode_command(cmd: Command) -> bytes:
        slot = "-" if cmd.slot is None else str(cmd.slot)
        if cmd.op == "DEPLOY":
            return f"DEPLOY {slot} {_b64(cmd.manifest or b'')}\n".encode("utf-8")
        if cmd.op in ("START", "STOP", "DELETE", "STATE", "MIGOUT"):
            if cmd.slot is None:
                raise BadFrame(f"{cmd.op} needs an explicit slot")
            return f"{cmd.op} {cmd.slot}\n".encode("utf-8")
        if cmd.op == "MIGIN":
            return f"MIGIN {slot} {_b64(cmd.manifest or b'')} {_b64(cmd.state or b'')}\n".encode("utf-8")
        raise BadFrame(f"unknown op {cmd.op!r}")

    @staticmethod
    def decode_command(frame: bytes) -> Command:
        try:
            line = frame.decode("utf-8")
        except UnicodeDecodeError:
            raise BadFrame("frame is not UTF-8") from None
        if not line.endswith("\n"):
            raise BadFrame("unterminated line")
        parts = line[:-1].split(" ")
        op = parts[0] if parts else ""

        def parse_slot(tok: str) -> int | None:
            if tok == "-":
                return None
            if not tok.isdigit():
                raise BadFrame(f"bad slot token {tok!r}")
            return int(tok)

        if op == "DEPLOY" and len(parts) == 3:
            return Command("DEPLOY", parse_slot(parts[1]), manifest=_unb64(parts[2]))
        if op in ("START", "STOP", "DELETE", "STATE", "MIGOUT") and len(parts) == 2:
            slot = parse_slot(parts[1])
            if slot is None:
                raise BadFrame(f"{op} needs an explicit slot")
            return Command(op, slot)
        if op == "MIGIN" and len(parts) == 4:
            return Command("MIGIN", parse_slot(parts[1]), manifest=_unb64(parts[2]), state=_unb64(parts[3]))
        raise BadFrame(f"malformed command line: {line!r}")

    @staticmethod
    def encode_reply(reply: Reply) -> bytes:
        if reply.ok:
            if reply.payload is not None:
                return f"OK {reply.slot} {_b64(reply.payload)}\n".encode("utf-8")
            return f"OK {reply.slot}\n".encode("utf-8")
        code = reply.err_code or "BADFRAME"
        text = reply.err_text.replace("\n", " ") or code.lower()
        return f"ERR {code} {text}\n".encode("utf-8")

    @staticmethod
    def decode_reply(frame: bytes) -> Reply:
        try:
            line = frame.decode("utf-8")
        except UnicodeDecodeError:
            raise BadFrame("reply is not UTF-8") from None
        if not line.endswith("\n"):
            raise BadFrame("unterminated reply")
        parts = line[:-1].split(" ")
        if parts and parts[0] == "OK" and len(parts) in (2, 3):
            if not parts[1].isdigit():
                raise BadFrame(f"bad slot in reply: {parts[1]!r}")
            payload = _unb64(parts[2]) if len(parts) == 3 else None
            return Reply(True, int(parts[1]), payload)
        if parts and parts[0] == "ERR" and len(parts) >= 3:
            if parts[1] not in ERR_CODES:
                raise BadFrame(f"unknown error code {parts[1]!r}")
            return Reply(False, err_code=parts[1], err_text=" ".join(parts[2:]))
        raise BadFrame(f"malformed reply: {line!r}")

    @staticmethod
    def encode_data(msg: DataMessage) -> bytes:
        return (
            f"DATA {msg.vs_slot} {msg.seq} {msg.ts_ms} "
            f"{format_value(msg.value)} {msg.unit.value}\n"
        ).encode("utf-8")

    @staticmethod
    def decode_data(frame: bytes) -> DataMessage:
        try:
            parts = frame.decode("utf-8").rstrip("\n").split(" ")
        except UnicodeDecodeError:
            raise BadFrame("data frame is not UTF-8") from None
        if len(parts) != 6 or parts[0] != "DATA":
            raise BadFrame(f"malformed data line: {frame!r}")
        try:
            return DataMessage(int(parts[1]), int(parts[2]), int(parts[3]), float(parts[4]), Unit(parts[5]))
        except ValueError as e:
            raise BadFrame(f"bad data field: {e}") from None


class MotesimCodec:
    """Binary TLV protocol used by constrained nodes (via GTO parents)."""

    platform = "MOTESIM"

    @staticmethod
    def _frame(ftype: int, payload: bytes) -> bytes:
        if len(payload) > 0xFFFF:
            raise BadFrame("payload too large for TLV length field")
        return struct.pack(">BH", ftype, len(payload)) + payload

    @staticmethod
    def _split(frame: bytes) -> tuple[int, bytes]:
        if len(frame) < 3:
            raise BadFrame("short TLV frame")
        ftype, length = struct.unpack(">BH", frame[:3])
        payload = frame[3:]
        if len(payload) != length:
            raise BadFrame(f"TLV length mismatch: header {length}, got {len(payload)}")
        return ftype, payload

    @classmethod
    def encode_command(cls, cmd: Command) -> bytes:
        if cmd.op == "DEPLOY":
            return cls._frame(TLV_DEPLOY, cmd.manifest or b"")
        if cmd.op in _OP_TLV:
            return cls._frame(_OP_TLV[cmd.op], b"")
        raise BadFrame(f"op {cmd.op!r} not supported by this platform")

    @classmethod
    def decode_command(cls, frame: bytes) -> Command:
        ftype, payload = cls._split(frame)
        if ftype == TLV_DEPLOY:
            return Command("DEPLOY", None, manifest=payload)
        if ftype in _TLV_OP:
            if payload:
                raise BadFrame(f"unexpected payload on type 0x{ftype:02x}")
            return Command(_TLV_OP[ftype], 0)
        raise BadFrame(f"unknown TLV command type 0x{ftype:02x}")

    @classmethod
    def encode_reply(cls, reply: Reply) -> bytes:
        if reply.ok:
            return cls._frame(TLV_OK, bytes([reply.slot]) + (reply.payload or b""))
        code = _ERR_BYTE.get(reply.err_code or "BADFRAME", _ERR_BYTE["BADFRAME"])
        return cls._frame(TLV_ERR, bytes([code]) + reply.err_text.encode("utf-8"))

    @classmethod
    def decode_reply(cls, frame: bytes) -> Reply:
        ftype, payload = cls._split(frame)
        if ftype == TLV_OK:
            if not payload:
                raise BadFrame("OK reply without slot byte")
            extra = payload[1:] or None
            return Reply(True, payload[0], extra)
        if ftype == TLV_ERR:
            if not payload:
                raise BadFrame("ERR reply without code byte")
            if payload[0] not in _BYTE_ERR:
                raise BadFrame(f"unknown error byte 0x{payload[0]:02x}")
            return Reply(False, err_code=_BYTE_ERR[payload[0]], err_text=payload[1:].decode("utf-8", "replace"))
        raise BadFrame(f"unknown TLV reply type 0x{ftype:02x}")

    @classmethod
    def encode_data(cls, msg: DataMessage) -> bytes:
        payload = struct.pack(">BIQdB", msg.vs_slot, msg.seq, msg.ts_ms, msg.value, _UNIT_BYTE[msg.unit])
        return cls._frame(TLV_DATA, payload)

    @classmethod
    def decode_data(cls, frame: bytes) -> DataMessage:
        ftype, payload = cls._split(frame)
        if ftype != TLV_DATA:
            raise BadFrame(f"not a data frame: 0x{ftype:02x}")
        if len(payload) != struct.calcsize(">BIQdB"):
            raise BadFrame(f"bad data payload length {len(payload)}")
        slot, seq, ts, value, unit_b = struct.unpack(">BIQdB", payload)
        if unit_b not in _BYTE_UNIT:
            raise BadFrame(f"unknown unit byte 0x{unit_b:02x}")
        return DataMessage(slot, seq, ts, value, _BYTE_UNIT[unit_b])


def wrap_gto(node_id: str, frame: bytes) -> bytes:
    raw = node_id.encode("utf-8")
    if not 0 < len(raw) <= MAX_NODE_ID_LEN:
        raise BadFrame(f"node id length {len(raw)} outside 1..{MAX_NODE_ID_LEN}")
    return bytes([len(raw)]) + raw + frame


def unwrap_gto(frame: bytes) -> tuple[str, bytes]:
    if not frame:
        raise BadFrame("empty relay frame")
    n = frame[0]
    if not 0 < n <= MAX_NODE_ID_LEN or len(frame) < 1 + n:
        raise BadFrame("bad relay prefix")
    try:
        node_id = frame[1 : 1 + n].decode("utf-8")
    except UnicodeDecodeError:
        raise BadFrame("relay node id is not UTF-8") from None
    return node_id, frame[1 + n :]


def is_gto_frame(frame: bytes) -> bool:
    """Relay frames start with a small length byte; text commands start
    with an uppercase letter (0x41+)."""
    return bool(frame) and 0 < frame[0] <= MAX_NODE_ID_LEN


def codec_for(platform: str):
    if platform == "SPOTSIM":
        return SpotsimCodec
    if platform == "MOTESIM":
        return MotesimCodec
    raise BadFrame(f"unknown platform {platform!r}")
