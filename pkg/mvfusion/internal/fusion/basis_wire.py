"""
Wire format for exchanged bases, little endian:

    magic      4s   b"MCRB"
    version    u16  1
    agent_id   u32
    class_id   u32
    round      u32
    d          u32
    p          u32
    basis      d*p f64, column major
    sigma      p f64

A stream is a plain concatenation of messages, read until EOF.
"""
import struct

import numpy as np

from mvfusion.constants import BASIS_MAGIC, BASIS_VERSION
from mvfusion.errors import CorruptMessage, MvFusionError
from mvfusion.internal.fusion.basis_fusion import BasisMessage
from mvfusion.types import OrthonormalBasis

HEADER = struct.Struct("<4sHIIIII")
HEADER_SIZE = HEADER.size
FLOAT = np.dtype("<f8")


def payload_size(d, p):
    return HEADER_SIZE + (d * p + p) * FLOAT.itemsize


def serialize_basis(msg):
    d, p = msg.basis.matrix.shape
    header = HEADER.pack(BASIS_MAGIC, BASIS_VERSION, msg.agent_id, msg.class_id, msg.round, d, p)
    body = msg.basis.matrix.astype(FLOAT).tobytes(order="F")
    sigma = msg.singular_values.astype(FLOAT).tobytes()
    return header + body + sigma


def _decode_one(buf, offset):
    if len(buf) - offset < HEADER_SIZE:
        raise CorruptMessage("truncated header at byte {}".format(offset))
    magic, version, agent_id, class_id, rnd, d, p = HEADER.unpack_from(buf, offset)
    if magic != BASIS_MAGIC:
        raise CorruptMessage("bad magic {!r} at byte {}".format(magic, offset))
    if version != BASIS_VERSION:
        raise CorruptMessage("unsupported version {}".format(version))
    if d == 0 or p == 0 or p > d:
        raise CorruptMessage("invalid basis shape {} x {}".format(d, p))

    end = offset + payload_size(d, p)
    if end > len(buf):
        raise CorruptMessage(
            "truncated payload: need {} bytes, have {}".format(end - offset, len(buf) - offset)
        )
    start = offset + HEADER_SIZE
    entries = np.frombuffer(buf, dtype=FLOAT, count=d * p, offset=start)
    sigma = np.frombuffer(buf, dtype=FLOAT, count=p, offset=start + d * p * FLOAT.itemsize)
    if not (np.all(np.isfinite(entries)) and np.all(np.isfinite(sigma))):
        raise CorruptMessage("non-finite entries in message from agent {}".format(agent_id))

    try:
        basis = OrthonormalBasis(entries.reshape((d, p), order="F").astype(np.float64))
        msg = BasisMessage(agent_id, class_id, rnd, basis, sigma.astype(np.float64))
    except MvFusionError as e:
        raise CorruptMessage("invalid basis payload: {}".format(e))
    return msg, end


def deserialize_basis(data):
    buf = bytes(data)
    msg, end = _decode_one(buf, 0)
    if end != len(buf):
        raise CorruptMessage("{} trailing bytes after message".format(len(buf) - end))
    return msg


def iter_messages(data):
    buf = bytes(data)
    offset = 0
    while offset < len(buf):
        msg, offset = _decode_one(buf, offset)
        yield msg


def write_messages(path, messages):
    with open(path, "wb") as f:
        for msg in messages:
            f.write(serialize_basis(msg))


def read_messages(path):
    with open(path, "rb") as f:
        return list(iter_messages(f.read()))
