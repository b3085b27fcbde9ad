"""Deterministic binary codec and length-prefixed framing.

Every value is a one-byte tag followed by its payload:

======  ===========  ==============================================
tag     type         payload
======  ===========  ==============================================
0x00    None         (empty)
0x01    False        (empty)
0x02    True         (empty)
0x03    int          8 bytes, little-endian two's complement
0x04    int          u32 length + little-endian two's complement
                     (only for values outside the 64-bit range)
0x05    float        8 bytes, IEEE 754 binary64 little-endian
0x06    str          u32 length + UTF-8 bytes
0x07    bytes        u32 length + raw bytes
0x08    ClusterId    u32 little-endian member index
0x09    tuple        u32 count + encoded fields in order
0x0A    list         u32 count + encoded items in order
0x0B    dict         u32 count + encoded key, value pairs in order
======  ===========  ==============================================

A frame is a u32 little-endian length followed by that many payload
bytes. A zero-length frame marks end-of-stream; no encoded value is
empty, so the marker is unambiguous.
"""

from __future__ import annotations

import struct

from ..prelude import ClusterId
from .errors import DecodeError, EncodeError

T_NONE, T_FALSE, T_TRUE, T_INT, T_BIGINT, T_FLOAT = 0x00, 0x01, 0x02, 0x03, 0x04, 0x05
T_STR, T_BYTES, T_CLUSTER_ID, T_TUPLE, T_LIST, T_DICT = 0x06, 0x07, 0x08, 0x09, 0x0A, 0x0B

_I64_MIN, _I64_MAX = -(1 << 63), (1 << 63) - 1
_U32 = struct.Struct("<I")
_TAG_I64 = struct.Struct("<Bq")
_TAG_F64 = struct.Struct("<Bd")
_TAG_U32 = struct.Struct("<BI")
_I64 = struct.Struct("<q")
_F64 = struct.Struct("<d")

HEADER_SIZE = 4
EOS_FRAME = b"\x00\x00\x00\x00"
MAX_FRAME = (1 << 32) - 1


def _encode_into(out: bytearray, value) -> None:
    # bool and ClusterId before int: both are int subclasses.
    if value is None:
        out.append(T_NONE)
    elif value is True:
        out.append(T_TRUE)
    elif value is False:
        out.append(T_FALSE)
    elif isinstance(value, ClusterId):
        if value > 0xFFFFFFFF:
            raise EncodeError(f"cluster id {int(value)} exceeds u32")
        out += _TAG_U32.pack(T_CLUSTER_ID, value)
    elif isinstance(value, int):
        if _I64_MIN <= value <= _I64_MAX:
            out += _TAG_I64.pack(T_INT, value)
        else:
            raw = int(value).to_bytes((value.bit_length() + 8) // 8, "little", signed=True)
            out += _TAG_U32.pack(T_BIGINT, len(raw))
            out += raw
    elif isinstance(value, float):
        out += _TAG_F64.pack(T_FLOAT, value)
    elif isinstance(value, str):
        raw = value.encode("utf-8")
        out += _TAG_U32.pack(T_STR, len(raw))
        out += raw
    elif isinstance(value, (bytes, bytearray)):
        out += _TAG_U32.pack(T_BYTES, len(value))
        out += value
    elif isinstance(value, tuple):
        out += _TAG_U32.pack(T_TUPLE, len(value))
        for v in value:
            _encode_into(out, v)
    elif isinstance(value, list):
        out += _TAG_U32.pack(T_LIST, len(value))
        for v in value:
            _encode_into(out, v)
    elif isinstance(value, dict):
        out += _TAG_U32.pack(T_DICT, len(value))
        for k, v in value.items():
            _encode_into(out, k)
            _encode_into(out, v)
    else:
        raise EncodeError(f"cannot encode {type(value).__name__}")


def encode(value) -> bytes:
    out = bytearray()
    _encode_into(out, value)
    return bytes(out)


def _need(data, pos: int, n: int) -> None:
    if pos + n > len(data):
        raise DecodeError(f"truncated value: need {n} bytes at offset {pos}, have {len(data) - pos}")


def _decode_at(data, pos: int):
    _need(data, pos, 1)
    tag = data[pos]
    if tag > T_DICT:
        raise DecodeError(f"unknown tag 0x{tag:02x} at offset {pos}")
    pos += 1
    if tag == T_INT:
        _need(data, pos, 8)
        return _I64.unpack_from(data, pos)[0], pos + 8
    if tag == T_NONE:
        return None, pos
    if tag == T_FALSE:
        return False, pos
    if tag == T_TRUE:
        return True, pos
    if tag == T_FLOAT:
        _need(data, pos, 8)
        return _F64.unpack_from(data, pos)[0], pos + 8
    _need(data, pos, 4)
    (n,) = _U32.unpack_from(data, pos)
    pos += 4
    if tag == T_CLUSTER_ID:
        return ClusterId(n), pos
    if tag in (T_STR, T_BYTES, T_BIGINT):
        _need(data, pos, n)
        raw = bytes(data[pos:pos + n])
        pos += n
        if tag == T_BYTES:
            return raw, pos
        if tag == T_BIGINT:
            return int.from_bytes(raw, "little", signed=True), pos
        try:
            return raw.decode("utf-8"), pos
        except UnicodeDecodeError as exc:
            raise DecodeError(f"invalid UTF-8 in string: {exc}") from None
    if tag in (T_TUPLE, T_LIST):
        items = []
        for _ in range(n):
            item, pos = _decode_at(data, pos)
            items.append(item)
        return (tuple(items) if tag == T_TUPLE else items), pos
    if tag == T_DICT:
        d = {}
        for _ in range(n):
            k, pos = _decode_at(data, pos)
            v, pos = _decode_at(data, pos)
            try:
                d[k] = v
            except TypeError:
                raise DecodeError(f"unhashable dict key of type {type(k).__name__}") from None
        return d, pos
    raise AssertionError("unreachable")


def decode(data: bytes):
    value, pos = _decode_at(data, 0)
    if pos != len(data):
        raise DecodeError(f"{len(data) - pos} trailing bytes after value")
    return value


def frame(payload: bytes) -> bytes:
    if len(payload) > MAX_FRAME:
        raise EncodeError("payload too large for a u32 length prefix")
    return _U32.pack(len(payload)) + payload


def encode_frame(value) -> bytes:
    out = bytearray(HEADER_SIZE)
    _encode_into(out, value)
    _U32.pack_into(out, 0, len(out) - HEADER_SIZE)
    return bytes(out)


class FrameDecoder:
    """Incremental splitter for a byte stream of frames.

    ``feed`` returns the payloads completed by the new data; an empty
    payload is the end-of-stream marker.
    """

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[bytes]:
        buf = self._buf
        buf += data
        frames = []
        pos = 0
        end = len(buf)
        while end - pos >= HEADER_SIZE:
            (n,) = _U32.unpack_from(buf, pos)
            if end - pos - HEADER_SIZE < n:
                break
            start = pos + HEADER_SIZE
            frames.append(bytes(buf[start:start + n]))
            pos = start + n
        if pos:
            del buf[:pos]
        return frames

    @property
    def pending(self) -> int:
        return len(self._buf)


def unframe(data: bytes) -> list[bytes]:
    """Split a complete buffer into frame payloads; partial trailers are an error."""
    dec = FrameDecoder()
    frames = dec.feed(data)
    if dec.pending:
        raise DecodeError(f"{dec.pending} bytes of incomplete frame at end of buffer")
    return frames


def append_frame(buf: bytearray, value) -> None:
    """Append one framed, encoded value to ``buf`` in place."""
    start = len(buf)
    buf += EOS_FRAME
    _encode_into(buf, value)
    _U32.pack_into(buf, start, len(buf) - start - HEADER_SIZE)
