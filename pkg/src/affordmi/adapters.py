"""Wire format and subprocess client for out-of-process (full-scale) encoders.

Every message is framed as ``uint32 LE length`` followed by the body. All
integers are uint32 little-endian, all reals float32 little-endian.

Text request body::

    b"AFTX"  n_names  (len_i  utf8_i) * n_names  p  D_e  ctx[p * D_e]

Text response body: ``K  D_t  rows[K * D_t]``.

Image request body::

    b"AFIM"  H  W  pixels[H * W * 3]

Image response body: ``L  Hp  Wp  D_v  layers[L * Hp * Wp * D_v]  cls[D_v]``.

An error response is ``b"AERR"`` followed by a UTF-8 message.

The external encoders return plain arrays, so no gradient reaches the
prompt context through them; they serve inference and frozen-feature
extraction at full scale.
"""
from __future__ import annotations

import struct
import subprocess
import sys
from typing import BinaryIO, List, Sequence, Tuple

import numpy as np

TEXT_MAGIC = b"AFTX"
IMAGE_MAGIC = b"AFIM"
ERROR_MAGIC = b"AERR"
_U32 = struct.Struct("<I")


class ProtocolError(RuntimeError):
    pass


def _f32(arr) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


class _Reader:
    def __init__(self, body: bytes):
        self.body, self.pos = body, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.body):
            raise ProtocolError("message truncated")
        chunk = self.body[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    def floats(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float32)

    def done(self):
        if self.pos != len(self.body):
            raise ProtocolError(f"{len(self.body) - self.pos} trailing bytes in message")


def encode_text_request(names: Sequence[str], ctx: np.ndarray) -> bytes:
    ctx = np.asarray(ctx, dtype=np.float32)
    if ctx.ndim != 2:
        raise ValueError("context must be p x D_e")
    parts = [TEXT_MAGIC, _U32.pack(len(names))]
    for n in names:
        raw = n.encode("utf-8")
        parts += [_U32.pack(len(raw)), raw]
    parts += [_U32.pack(ctx.shape[0]), _U32.pack(ctx.shape[1]), _f32(ctx)]
    return b"".join(parts)


def decode_text_request(body: bytes) -> Tuple[List[str], np.ndarray]:
    r = _Reader(body)
    if r.take(4) != TEXT_MAGIC:
        raise ProtocolError("not a text request")
    names = [r.take(r.u32()).decode("utf-8") for _ in range(r.u32())]
    p, d = r.u32(), r.u32()
    ctx = r.floats(p * d).reshape(p, d)
    r.done()
    return names, ctx


def encode_rows(rows: np.ndarray) -> bytes:
    rows = np.asarray(rows, dtype=np.float32)
    return _U32.pack(rows.shape[0]) + _U32.pack(rows.shape[1]) + _f32(rows)


def decode_rows(body: bytes) -> np.ndarray:
    _raise_if_error(body)
    r = _Reader(body)
    k, d = r.u32(), r.u32()
    rows = r.floats(k * d).reshape(k, d)
    r.done()
    return rows


def encode_image_request(pixels: np.ndarray) -> bytes:
    px = np.asarray(pixels, dtype=np.float32)
    if px.ndim != 3 or px.shape[2] != 3:
        raise ValueError("pixels must be H x W x 3")
    return IMAGE_MAGIC + _U32.pack(px.shape[0]) + _U32.pack(px.shape[1]) + _f32(px)


def decode_image_request(body: bytes) -> np.ndarray:
    r = _Reader(body)
    if r.take(4) != IMAGE_MAGIC:
        raise ProtocolError("not an image request")
    h, w = r.u32(), r.u32()
    px = r.floats(h * w * 3).reshape(h, w, 3)
    r.done()
    return px


def encode_image_response(layers: Sequence[np.ndarray], cls: np.ndarray) -> bytes:
    stack = np.stack([np.asarray(l, dtype=np.float32) for l in layers])
    n, hp, wp, d = stack.shape
    if np.shape(cls) != (d,):
        raise ValueError("cls length must equal the layer feature dimension")
    return b"".join(_U32.pack(v) for v in (n, hp, wp, d)) + _f32(stack) + _f32(cls)


def decode_image_response(body: bytes) -> Tuple[List[np.ndarray], np.ndarray]:
    _raise_if_error(body)
    r = _Reader(body)
    n, hp, wp, d = (r.u32() for _ in range(4))
    stack = r.floats(n * hp * wp * d).reshape(n, hp, wp, d)
    cls = r.floats(d)
    r.done()
    return list(stack), cls


def encode_error(message: str) -> bytes:
    return ERROR_MAGIC + message.encode("utf-8")


def _raise_if_error(body: bytes):
    if body[:4] == ERROR_MAGIC:
        raise ProtocolError("remote encoder error: " + body[4:].decode("utf-8", "replace"))


def write_frame(stream: BinaryIO, body: bytes) -> None:
    stream.write(_U32.pack(len(body)) + body)
    stream.flush()


def read_frame(stream: BinaryIO) -> bytes:
    head = stream.read(4)
    if len(head) < 4:
        raise EOFError("stream closed")
    (n,) = _U32.unpack(head)
    body = stream.read(n)
    if len(body) != n:
        raise ProtocolError("stream closed mid-frame")
    return body


class EncoderProcess:
    """Owns one encoder server subprocess speaking framed messages over stdio."""

    def __init__(self, argv: Sequence[str]):
        self.proc = subprocess.Popen(list(argv), stdin=subprocess.PIPE, stdout=subprocess.PIPE)

    def request(self, body: bytes) -> bytes:
        write_frame(self.proc.stdin, body)
        return read_frame(self.proc.stdout)

    def close(self):
        if self.proc.poll() is None:
            self.proc.stdin.close()
            self.proc.wait(timeout=10)
        self.proc.stdout.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class ExternalTextEncoder:
    def __init__(self, process: EncoderProcess):
        self.process = process

    def encode(self, names: Sequence[str], ctx: np.ndarray) -> np.ndarray:
        return decode_rows(self.process.request(encode_text_request(names, ctx)))


class ExternalImageEncoder:
    def __init__(self, process: EncoderProcess):
        self.process = process

    def encode(self, pixels: np.ndarray) -> Tuple[List[np.ndarray], np.ndarray]:
        return decode_image_response(self.process.request(encode_image_request(pixels)))


def serve_stub(stdin: BinaryIO, stdout: BinaryIO, seed: int = 0, embed_dim: int = 16, text_dim: int = 16,
               patch_size: int = 8, vision_dim: int = 16, n_layers: int = 4) -> None:
    """Answer framed requests with the stub encoders until stdin closes.

    Text requests get one unnormalized row per class name, computed from
    ``[ctx; name tokens]``; an empty context encodes the name alone.
    """
    import torch

    from .text import StubTextEncoder, build_affordance_prompt
    from .vision import StubImageEncoder

    text_enc = StubTextEncoder(seed, embed_dim, text_dim)
    image_enc = StubImageEncoder(seed, patch_size, vision_dim, n_layers)
    while True:
        try:
            body = read_frame(stdin)
        except EOFError:
            return
        try:
            if body[:4] == TEXT_MAGIC:
                names, ctx = decode_text_request(body)
                ctx_t = torch.from_numpy(ctx.astype(np.float64))
                if ctx_t.shape[0] == 0:
                    ctx_t = ctx_t.reshape(0, embed_dim)
                with torch.no_grad():
                    rows = [text_enc(build_affordance_prompt(ctx_t, text_enc.embed(n))).numpy() for n in names]
                reply = encode_rows(np.stack(rows))
            elif body[:4] == IMAGE_MAGIC:
                px = decode_image_request(body)
                with torch.no_grad():
                    layers, cls = image_enc(torch.from_numpy(px.astype(np.float64)))
                reply = encode_image_response([l.numpy() for l in layers], cls.numpy())
            else:
                reply = encode_error("unknown request type")
        except (ProtocolError, ValueError) as exc:
            reply = encode_error(str(exc))
        write_frame(stdout, reply)


if __name__ == "__main__":
    serve_stub(sys.stdin.buffer, sys.stdout.buffer)
