import numpy as np
import pytest

from fedoptlab.codec import CompressedMessage, decode_nat, encode_nat


def _fields(msg, d):
    """Decode raw (sign, biased exponent) fields for inspection."""
    bits = np.unpackbits(
        np.frombuffer(msg.payload, np.uint8), count=9 * d, bitorder="little"
    ).reshape(d, 9)
    sign = bits[:, 0]
    exp = np.zeros(d, dtype=int)
    for b in range(8):
        exp |= bits[:, 1 + b].astype(int) << b
    return sign, exp


def test_two_encodes_as_exponent_128():
    # binary32 exponent of 2.0 is 1, biased 1 + 127 = 128
    msg = encode_nat(np.array([2.0]))
    assert msg.bit_count == 9
    sign, exp = _fields(msg, 1)
    assert sign[0] == 0 and exp[0] == 128
    assert decode_nat(msg, 1)[0] == 2.0


def test_zero_encodes_as_zero_fields():
    msg = encode_nat(np.array([0.0]))
    sign, exp = _fields(msg, 1)
    assert sign[0] == 0 and exp[0] == 0
    assert decode_nat(msg, 1)[0] == 0.0


def test_negative_zero_normalizes_to_plus_zero():
    msg = encode_nat(np.array([-0.0]))
    sign, exp = _fields(msg, 1)
    assert sign[0] == 0 and exp[0] == 0


def test_rounded_negative_values_encode_expected_fields():
    # the two admissible outputs of logarithmic rounding of -2.75
    for value, expected_exp in ((-2.0, 128), (-4.0, 129)):
        msg = encode_nat(np.array([value]))
        sign, exp = _fields(msg, 1)
        assert sign[0] == 1 and exp[0] == expected_exp
        assert decode_nat(msg, 1)[0] == value


def test_non_power_of_two_rejected():
    with pytest.raises(ValueError, match="power of two"):
        encode_nat(np.array([2.5]))


def test_overflow_rejected():
    with pytest.raises(OverflowError):
        encode_nat(np.array([2.0 ** 128]))


def test_below_normal_range_rejected():
    with pytest.raises(ValueError, match="normal range"):
        encode_nat(np.array([2.0 ** -130]))


def test_bit_count_and_padding():
    x = np.array([1.0, -2.0, 0.0, 0.5, 8.0])
    msg = encode_nat(x)
    assert msg.bit_count == 45
    assert len(msg.payload) == (45 + 7) // 8
    assert np.array_equal(decode_nat(msg, 5), x)


def test_round_trip_bulk_random_powers_of_two():
    rng = np.random.default_rng(2024)
    for _ in range(10_000):
        d = int(rng.integers(1, 33))
        exps = rng.integers(-126, 128, size=d)
        signs = rng.choice([-1.0, 1.0], size=d)
        x = signs * np.ldexp(1.0, exps)
        x[rng.random(d) < 0.1] = 0.0
        msg = encode_nat(x)
        assert msg.bit_count == 9 * d
        assert np.array_equal(decode_nat(msg, d), x)


def test_decode_validates_metadata():
    msg = encode_nat(np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        decode_nat(msg, 3)
    with pytest.raises(ValueError):
        decode_nat(CompressedMessage(msg.payload, msg.bit_count, "other"), 2)
