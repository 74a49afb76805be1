"""Weight bundle file format for the neural policies.

A bundle is a single little-endian binary file carrying every tensor of
one policy network plus the metadata needed to run it: input vector
length V, feature dimension D, attention head count, output kind, and
squashing bounds.  Layout:

    offset  size  field
    0       4     magic "SVOW"
    4       4     u32 format version (currently 1)
    8       4     u32 V (dynamic input vector length, 5 or 6)
    12      4     u32 D (feature dimension)
    16      4     u32 attention head count
    20      1     u8 output kind: 0 = action (v_ref, sigma), 1 = svo scalar
    21      3     zero padding
    24      4     f32 bound_a (action: v_max; svo: low degree bound)
    28      4     f32 bound_b (action: sigma_max; svo: high degree bound)
    32      4     u32 tensor count
    36      ...   manifest: per tensor u16 name length, utf-8 name,
                  u8 dtype (0 = f32), u8 ndim, ndim x u32 dims
    ...     ...   payloads: f32 little-endian, row-major, manifest order
    end-4   4     u32 CRC-32C (Castagnoli) of every preceding byte

Weight matrices use the y = W @ x + b convention: W has shape
(out, in).  The tensor set is fixed; hidden widths are free and are
recovered from the stored shapes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

MAGIC = b"SVOW"
FORMAT_VERSION = 1

OUTPUT_ACTION = 0
OUTPUT_SVO = 1

# Fixed tensor catalog; hidden layer widths come from the shapes.
TENSOR_NAMES: Tuple[str, ...] = (
    "dyn_vector_mlp.0.w", "dyn_vector_mlp.0.b",
    "dyn_vector_mlp.1.w", "dyn_vector_mlp.1.b",
    "dyn_post_mlp.0.w", "dyn_post_mlp.0.b",
    "static_vector_mlp.0.w", "static_vector_mlp.0.b",
    "static_vector_mlp.1.w", "static_vector_mlp.1.b",
    "static_post_mlp.0.w", "static_post_mlp.0.b",
    "mha.w_q", "mha.b_q",
    "mha.w_k", "mha.b_k",
    "mha.w_v", "mha.b_v",
    "mha.w_o", "mha.b_o",
    "decoder_mlp.0.w", "decoder_mlp.0.b",
    "decoder_mlp.1.w", "decoder_mlp.1.b",
    "decoder_mlp.2.w", "decoder_mlp.2.b",
)

STATIC_VECTOR_LEN = 5


class BadMagic(ValueError):
    """File does not start with the bundle magic."""


class ChecksumMismatch(ValueError):
    """Stored checksum does not match the file contents."""


class ShapeInconsistency(ValueError):
    """A tensor is missing, superfluous, or has an incompatible shape."""


def _build_crc32c_table() -> List[int]:
    poly = 0x82F63B78  # reflected Castagnoli polynomial
    table = []
    for i in range(256):
        crc = i
        for _ in range(8):
            crc = (crc >> 1) ^ poly if crc & 1 else crc >> 1
        table.append(crc)
    return table


_CRC32C_TABLE = _build_crc32c_table()


def crc32c(data: bytes, crc: int = 0) -> int:
    """CRC-32C (Castagnoli); differs from the common zlib polynomial."""
    crc = ~crc & 0xFFFFFFFF
    table = _CRC32C_TABLE
    for b in data:
        crc = (crc >> 8) ^ table[(crc ^ b) & 0xFF]
    return ~crc & 0xFFFFFFFF


@dataclass
class WeightBundle:
    """Immutable named-tensor set plus inference metadata."""

    v_dim: int
    feature_dim: int
    n_heads: int
    output_kind: int
    bound_a: float
    bound_b: float
    tensors: Dict[str, np.ndarray]
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        converted = {}
        for name, arr in self.tensors.items():
            a = np.ascontiguousarray(arr, dtype=np.float32)
            a.flags.writeable = False
            converted[name] = a
        self.tensors = converted
        # Bounds live as f32 in the file; rounding here keeps a bundle
        # bitwise stable across save/load.
        self.bound_a = float(np.float32(self.bound_a))
        self.bound_b = float(np.float32(self.bound_b))
        _validate(self)

    def tensor(self, name: str) -> np.ndarray:
        return self.tensors[name]

    @property
    def output_size(self) -> int:
        return 2 if self.output_kind == OUTPUT_ACTION else 1


def _expect(cond: bool, name: str, msg: str):
    if not cond:
        raise ShapeInconsistency(f"{name}: {msg}")


def _validate(b: WeightBundle):
    if b.format_version != FORMAT_VERSION:
        raise ShapeInconsistency(
            f"format_version {b.format_version} unsupported (expected {FORMAT_VERSION})"
        )
    if b.v_dim not in (5, 6):
        raise ShapeInconsistency(f"v_dim must be 5 or 6, got {b.v_dim}")
    if b.output_kind not in (OUTPUT_ACTION, OUTPUT_SVO):
        raise ShapeInconsistency(f"unknown output kind {b.output_kind}")
    if b.feature_dim <= 0:
        raise ShapeInconsistency(f"feature_dim must be positive, got {b.feature_dim}")
    if b.n_heads <= 0 or b.feature_dim % b.n_heads != 0:
        raise ShapeInconsistency(
            f"head count {b.n_heads} must divide feature_dim {b.feature_dim}"
        )
    if b.output_kind == OUTPUT_ACTION:
        if not (b.bound_a > 0.0 and b.bound_b > 0.0):
            raise ShapeInconsistency(
                f"action bounds must be positive, got ({b.bound_a}, {b.bound_b})"
            )
    else:
        if not b.bound_b > b.bound_a:
            raise ShapeInconsistency(
                f"svo bounds must be increasing, got ({b.bound_a}, {b.bound_b})"
            )

    missing = [n for n in TENSOR_NAMES if n not in b.tensors]
    if missing:
        raise ShapeInconsistency(f"missing tensors {missing}")
    extra = [n for n in b.tensors if n not in TENSOR_NAMES]
    if extra:
        raise ShapeInconsistency(f"unexpected tensors {extra}")

    def w(name):
        t = b.tensors[name]
        _expect(t.ndim == 2, name, f"expected a matrix, got ndim {t.ndim}")
        return t

    def bias(name, rows):
        t = b.tensors[name]
        _expect(t.ndim == 1, name, f"expected a vector, got ndim {t.ndim}")
        _expect(
            t.shape[0] == rows, name,
            f"bias length {t.shape[0]} does not match layer rows {rows}",
        )

    d = b.feature_dim

    def mlp_chain(prefix: str, in_dim: int, layers: int) -> int:
        cur = in_dim
        for i in range(layers):
            mat = w(f"{prefix}.{i}.w")
            _expect(
                mat.shape[1] == cur, f"{prefix}.{i}.w",
                f"input dim {mat.shape[1]} does not match preceding width {cur}",
            )
            bias(f"{prefix}.{i}.b", mat.shape[0])
            cur = mat.shape[0]
        return cur

    dyn_out = mlp_chain("dyn_vector_mlp", b.v_dim, 2)
    dyn_feat = mlp_chain("dyn_post_mlp", dyn_out, 1)
    _expect(dyn_feat == d, "dyn_post_mlp.0.w", f"output dim {dyn_feat} must equal D {d}")

    st_out = mlp_chain("static_vector_mlp", STATIC_VECTOR_LEN, 2)
    st_feat = mlp_chain("static_post_mlp", st_out, 1)
    _expect(st_feat == d, "static_post_mlp.0.w", f"output dim {st_feat} must equal D {d}")

    for part in ("q", "k", "v", "o"):
        mat = w(f"mha.w_{part}")
        _expect(
            mat.shape == (d, d), f"mha.w_{part}",
            f"expected shape ({d}, {d}), got {mat.shape}",
        )
        bias(f"mha.b_{part}", d)

    dec_out = mlp_chain("decoder_mlp", d, 3)
    _expect(
        dec_out == b.output_size, "decoder_mlp.2.w",
        f"output size {dec_out} does not match output kind ({b.output_size})",
    )


def save_weights(bundle: WeightBundle, path: str):
    """Serialize a bundle; byte-deterministic for identical contents."""
    parts = [
        struct.pack(
            "<4sIIIIB3xffI",
            MAGIC,
            bundle.format_version,
            bundle.v_dim,
            bundle.feature_dim,
            bundle.n_heads,
            bundle.output_kind,
            float(bundle.bound_a),
            float(bundle.bound_b),
            len(TENSOR_NAMES),
        )
    ]
    for name in TENSOR_NAMES:
        raw = name.encode("utf-8")
        t = bundle.tensors[name]
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<BB", 0, t.ndim))
        parts.append(struct.pack(f"<{t.ndim}I", *t.shape))
    for name in TENSOR_NAMES:
        parts.append(bundle.tensors[name].astype("<f4", copy=False).tobytes(order="C"))
    blob = b"".join(parts)
    blob += struct.pack("<I", crc32c(blob))
    with open(path, "wb") as fh:
        fh.write(blob)


def load_weights(path: str) -> WeightBundle:
    """Read and fully validate a bundle file."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise BadMagic(f"{path}: not a weight bundle (magic mismatch)")
    if len(blob) < 40:
        raise ChecksumMismatch(f"{path}: truncated header")
    stored = struct.unpack("<I", blob[-4:])[0]
    actual = crc32c(blob[:-4])
    if stored != actual:
        raise ChecksumMismatch(
            f"{path}: checksum {stored:#010x} does not match contents {actual:#010x}"
        )
    (magic, version, v_dim, d, heads, kind, bound_a, bound_b, count) = struct.unpack_from(
        "<4sIIIIB3xffI", blob, 0
    )
    offset = struct.calcsize("<4sIIIIB3xffI")

    manifest = []
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            name = blob[offset:offset + name_len].decode("utf-8")
            offset += name_len
            dtype, ndim = struct.unpack_from("<BB", blob, offset)
            offset += 2
            if dtype != 0:
                raise ShapeInconsistency(f"{name}: unsupported dtype code {dtype}")
            dims = struct.unpack_from(f"<{ndim}I", blob, offset)
            offset += 4 * ndim
            manifest.append((name, dims))
    except (struct.error, UnicodeDecodeError) as e:
        raise ChecksumMismatch(f"{path}: truncated or garbled manifest") from e

    tensors: Dict[str, np.ndarray] = {}
    for name, dims in manifest:
        n_items = int(np.prod(dims, dtype=np.int64)) if dims else 1
        nbytes = 4 * n_items
        if offset + nbytes > len(blob) - 4:
            raise ChecksumMismatch(f"{path}: payload for {name} runs past end of file")
        arr = np.frombuffer(blob, dtype="<f4", count=n_items, offset=offset)
        tensors[name] = arr.reshape(dims).copy()
        offset += nbytes
    if offset != len(blob) - 4:
        raise ChecksumMismatch(
            f"{path}: {len(blob) - 4 - offset} unaccounted bytes before checksum"
        )
    return WeightBundle(
        v_dim=v_dim,
        feature_dim=d,
        n_heads=heads,
        output_kind=kind,
        bound_a=bound_a,
        bound_b=bound_b,
        tensors=tensors,
        format_version=version,
    )
