"""Binary artifact formats.

All files are little-endian. Each begins with a 4-byte magic and a u16
version, and may end with a provenance trailer: ``b"TFCH"``, u32 length, then
that many bytes of UTF-8 JSON (config hash, upstream hash, seed). Readers that
stop after the payload simply ignore the trailer.

TFDS (descriptor set)::

    "TFDS" u16 version, u16 id_len, id bytes, u32 count,
    count x (f32 x, f32 y, f32 scale, f32 orientation, 128 x f32)

TFGD (global descriptors, many per file)::

    "TFGD" u16 version, u16 flags (bit 0: ESVM space), u32 count, u32 dim,
    count x (u16 id_len, id bytes, dim x f32)

TFEM (encoder model)::

    "TFEM" u16 version, config scalars, local whitening, codebooks, joint PCA;
    matrices are u32 rows, u32 cols, rows*cols f32.
"""
import io
import json
import struct

import numpy as np

from typeret.embedding import (
    Codebook,
    EncoderConfig,
    EncoderModel,
    GlobalDescriptor,
    GmpConfig,
    WhiteningTransform,
)
from typeret.errors import FormatError
from typeret.features import DESCRIPTOR_DIM, DescriptorSet

VERSION = 1
TRAILER_MAGIC = b"TFCH"
FLAG_ESVM = 1


class _Reader:
    def __init__(self, data):
        self.buf = memoryview(data)
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise FormatError("truncated file")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))

    def array(self, count, dtype="<f4"):
        raw = self.take(count * np.dtype(dtype).itemsize)
        return np.frombuffer(raw, dtype=dtype).copy()

    def matrix(self):
        rows, cols = self.unpack("<II")
        return self.array(rows * cols).reshape(rows, cols)

    def remaining(self):
        return len(self.buf) - self.pos


def _header(fh, magic):
    fh.write(magic)
    fh.write(struct.pack("<H", VERSION))


def _check_header(r, magic):
    got = bytes(r.take(4))
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}")
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")


def _write_trailer(fh, meta):
    if meta is None:
        return
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    fh.write(TRAILER_MAGIC)
    fh.write(struct.pack("<I", len(blob)))
    fh.write(blob)


def _read_trailer(r):
    if r.remaining() == 0:
        return {}
    if bytes(r.take(4)) != TRAILER_MAGIC:
        raise FormatError("unexpected trailing bytes")
    (n,) = r.unpack("<I")
    return json.loads(bytes(r.take(n)).decode("utf-8"))


def _id_bytes(image_id):
    b = image_id.encode("utf-8")
    if len(b) > 0xFFFF:
        raise FormatError("image id too long")
    return b


def _write_matrix(fh, m):
    m = np.ascontiguousarray(m, dtype="<f4")
    if m.ndim == 1:
        m = m[None]
    fh.write(struct.pack("<II", *m.shape))
    fh.write(m.tobytes())


# -- descriptor sets ---------------------------------------------------------

def dump_descriptor_set(ds, meta=None):
    fh = io.BytesIO()
    _header(fh, b"TFDS")
    ib = _id_bytes(ds.image_id)
    fh.write(struct.pack("<H", len(ib)))
    fh.write(ib)
    fh.write(struct.pack("<I", len(ds)))
    rec = np.concatenate([ds.keypoints, ds.descriptors], axis=1).astype("<f4")
    fh.write(rec.tobytes())
    _write_trailer(fh, meta)
    return fh.getvalue()


def load_descriptor_set(data):
    r = _Reader(data)
    _check_header(r, b"TFDS")
    (id_len,) = r.unpack("<H")
    image_id = bytes(r.take(id_len)).decode("utf-8")
    (count,) = r.unpack("<I")
    rec = r.array(count * (4 + DESCRIPTOR_DIM)).reshape(count, 4 + DESCRIPTOR_DIM)
    meta = _read_trailer(r)
    return DescriptorSet(image_id, rec[:, :4], rec[:, 4:]), meta


# -- global descriptors ------------------------------------------------------

def dump_global_descriptors(descs, esvm=False, meta=None, dim=None):
    descs = list(descs)
    if dim is None:
        dim = len(descs[0].vector) if descs else 0
    fh = io.BytesIO()
    _header(fh, b"TFGD")
    fh.write(struct.pack("<HII", FLAG_ESVM if esvm else 0, len(descs), dim))
    for g in descs:
        v = np.asarray(g.vector, dtype="<f4")
        if v.shape != (dim,):
            raise FormatError("inconsistent descriptor dimensions")
        ib = _id_bytes(g.image_id)
        fh.write(struct.pack("<H", len(ib)))
        fh.write(ib)
        fh.write(v.tobytes())
    _write_trailer(fh, meta)
    return fh.getvalue()


def load_global_descriptors(data):
    """Returns ``(descriptors, esvm_flag, meta)``."""
    r = _Reader(data)
    _check_header(r, b"TFGD")
    flags, count, dim = r.unpack("<HII")
    out = []
    for _ in range(count):
        (id_len,) = r.unpack("<H")
        image_id = bytes(r.take(id_len)).decode("utf-8")
        out.append(GlobalDescriptor(image_id, r.array(dim).astype(np.float64)))
    meta = _read_trailer(r)
    return out, bool(flags & FLAG_ESVM), meta


# -- encoder model -----------------------------------------------------------

_CFG = struct.Struct("<IIdddIIdIQQ")


def dump_encoder(model, meta=None):
    c = model.config
    fh = io.BytesIO()
    _header(fh, b"TFEM")
    fh.write(_CFG.pack(c.n_clusters, c.n_codebooks, c.gmp.lam, c.gmp.residual_tol, c.power,
                       c.target_dim, c.local_dim, c.dirichlet_eps, c.kmeans_iters,
                       c.max_training_descriptors, c.seed))
    for w in (model.local_whitening,):
        fh.write(struct.pack("<d", w.eps))
        _write_matrix(fh, w.mean)
        _write_matrix(fh, w.basis)
    fh.write(struct.pack("<I", len(model.codebooks)))
    for cb in model.codebooks:
        fh.write(struct.pack("<Q", cb.seed))
        _write_matrix(fh, cb.centroids)
    fh.write(struct.pack("<d", model.joint_pca.eps))
    _write_matrix(fh, model.joint_pca.mean)
    _write_matrix(fh, model.joint_pca.basis)
    _write_trailer(fh, meta)
    return fh.getvalue()


def load_encoder(data):
    r = _Reader(data)
    _check_header(r, b"TFEM")
    (k, nc, lam, rtol, power, target, local_dim, deps, iters, maxd, seed) = r.unpack(_CFG.format)
    cfg = EncoderConfig(n_clusters=k, n_codebooks=nc, gmp=GmpConfig(lam, rtol), power=power,
                        target_dim=target, local_dim=local_dim, dirichlet_eps=deps,
                        kmeans_iters=iters, max_training_descriptors=maxd, seed=seed)
    (eps,) = r.unpack("<d")
    local = WhiteningTransform(r.matrix()[0], r.matrix(), eps)
    (n_books,) = r.unpack("<I")
    books = []
    for _ in range(n_books):
        (s,) = r.unpack("<Q")
        books.append(Codebook(r.matrix(), s))
    (eps,) = r.unpack("<d")
    joint = WhiteningTransform(r.matrix()[0], r.matrix(), eps)
    meta = _read_trailer(r)
    return EncoderModel(cfg, local, books, joint), meta


def write_bytes(path, data):
    with open(path, "wb") as fh:
        fh.write(data)


def read_bytes(path):
    with open(path, "rb") as fh:
        return fh.read()
