"""16-bit fixed-point arithmetic shared by the golden model and the datapath.

Activations, weights and biases are Q8.8 words (``FixedWord``), held as raw
signed integers. Products and accumulators are Q16.16 words (``AccumWord``)
in 32 bits. Every function here operates on raw integers so the golden
model and the cycle-level simulator see exactly the same bits.

Scalar functions take Python ints; the ``*_array`` variants take numpy
integer arrays and return int64 arrays.
"""

import numpy as np

FRAC_BITS = 8
ONE = 1 << FRAC_BITS

FIXED_MIN = -(1 << 15)
FIXED_MAX = (1 << 15) - 1
ACC_MIN = -(1 << 31)
ACC_MAX = (1 << 31) - 1


def _sat16(v):
    if v > FIXED_MAX:
        return FIXED_MAX
    if v < FIXED_MIN:
        return FIXED_MIN
    return v


def quantize(x):
    """Real -> raw Q8.8, round-to-nearest-even, saturating."""
    # float * 2**8 is exact, and round() on floats is half-to-even
    return _sat16(int(round(float(x) * ONE)))


def to_real(raw):
    return raw / ONE


def acc_to_real(raw):
    return raw / (ONE * ONE)


def mul(a, b):
    # |a*b| <= 2**30, always representable in Q16.16
    return a * b


def add_sat(a, b):
    s = a + b
    if s > ACC_MAX:
        return ACC_MAX
    if s < ACC_MIN:
        return ACC_MIN
    return s


def promote(a):
    """Q8.8 -> Q16.16 (exact)."""
    return a << FRAC_BITS


def narrow(a):
    """Q16.16 -> Q8.8: shift right by 8 with round-half-even, then saturate."""
    q = a >> FRAC_BITS
    r = a & (ONE - 1)
    half = ONE >> 1
    if r > half or (r == half and q & 1):
        q += 1
    return _sat16(q)


def relu(a):
    return a if a > 0 else 0


# -- vectorized variants ----------------------------------------------------

def quantize_array(x):
    x = np.asarray(x, dtype=np.float64) * ONE
    return np.clip(np.rint(x), FIXED_MIN, FIXED_MAX).astype(np.int64)


def add_sat_array(a, b):
    return np.clip(np.asarray(a, dtype=np.int64) + np.asarray(b, dtype=np.int64),
                   ACC_MIN, ACC_MAX)


def narrow_array(a):
    a = np.asarray(a, dtype=np.int64)
    q = a >> FRAC_BITS
    r = a & (ONE - 1)
    half = ONE >> 1
    q = q + ((r > half) | ((r == half) & ((q & 1) == 1)))
    return np.clip(q, FIXED_MIN, FIXED_MAX)


def promote_array(a):
    return np.asarray(a, dtype=np.int64) << FRAC_BITS
