"""Bit-exact 9-bit wire format for power-of-two vectors.

After natural compression every coordinate is 0 or a signed power of two,
so a coordinate is fully described by one sign bit plus the 8-bit biased
exponent of the binary32 format (bias 127).  Coordinates are packed
contiguously, least-significant-bit first within bytes, and the final byte
is zero padded.  A zero coordinate is encoded as sign 0, exponent field 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EXP_BIAS = 127
BITS_PER_COORD = 9
CODEC_ID = "nat9"


@dataclass(frozen=True)
class CompressedMessage:
    payload: bytes
    bit_count: int
    codec_id: str


def encode_nat(x) -> CompressedMessage:
    """Encode a vector of zeros / signed powers of two at 9 bits per entry.

    Raises ValueError for entries that are not 0 or +-2**e, or whose
    exponent falls below the binary32 normal range, and OverflowError when
    the biased exponent would be 255.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("expected a 1-d vector")
    if not np.all(np.isfinite(x)):
        raise ValueError("entries must be finite")

    mant, exp2 = np.frexp(x)  # x = mant * 2**exp2 with |mant| in [0.5, 1)
    zero = x == 0.0
    if not np.all(zero | (np.abs(mant) == 0.5)):
        raise ValueError(
            "entries must be 0 or a signed power of two; "
            "apply natural compression first"
        )
    biased = exp2 - 1 + EXP_BIAS
    biased = np.where(zero, 0, biased)
    if np.any(~zero & (biased < 1)):
        raise ValueError("exponent below the binary32 normal range")
    if np.any(biased > 254):
        raise OverflowError("biased exponent 255 is reserved; value too large")

    sign = np.signbit(x) & ~zero
    bits = np.zeros((x.size, BITS_PER_COORD), dtype=np.uint8)
    bits[:, 0] = sign
    biased_u = biased.astype(np.uint16)
    for b in range(8):
        bits[:, 1 + b] = (biased_u >> b) & 1
    payload = np.packbits(bits.reshape(-1), bitorder="little").tobytes()
    return CompressedMessage(payload, BITS_PER_COORD * x.size, CODEC_ID)


def decode_nat(msg: CompressedMessage, d: int) -> np.ndarray:
    """Inverse of :func:`encode_nat`; bit-exact round trip."""
    if msg.codec_id != CODEC_ID:
        raise ValueError(f"unknown codec {msg.codec_id!r}")
    if msg.bit_count != BITS_PER_COORD * d:
        raise ValueError("bit count does not match the requested dimension")
    raw = np.frombuffer(msg.payload, dtype=np.uint8)
    bits = np.unpackbits(raw, count=BITS_PER_COORD * d, bitorder="little")
    bits = bits.reshape(d, BITS_PER_COORD)
    sign = bits[:, 0].astype(bool)
    biased = np.zeros(d, dtype=np.int64)
    for b in range(8):
        biased |= bits[:, 1 + b].astype(np.int64) << b
    values = np.where(biased == 0, 0.0, np.ldexp(1.0, biased - EXP_BIAS))
    return np.where(sign, -values, values)
