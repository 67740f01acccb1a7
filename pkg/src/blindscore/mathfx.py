"""Table-driven transcendentals and integer square roots on Q16.16 values.

exp and ln run on 256-entry lookup tables with linear interpolation; the
tables live in `_tables.py` as literal constants so every party computes the
same bits. Square roots are floor integer square roots (the classic Newton
iteration with floor rounding; `math.isqrt` implements exactly that).
"""

from __future__ import annotations

import math

import numpy as np

from ._tables import EXP2_TABLE, LN1P_TABLE, LN2_RAW, LOG2E_RAW
from .errors import DomainError, Overflow
from .fixedpoint import FRAC_BITS, ONE, RAW_MAX, FixedScalar, FixedTensor, check_raw


def exp_raw(t_raw: int) -> int:
    """e^t as a raw Q16.16 value. Underflows to 0, overflow raises.

    Decomposes e^t = 2^(t*log2 e) = 2^n * 2^f with n integer and f in [0,1),
    then reads 2^f off the table with 8-bit linear interpolation.
    """
    u = (t_raw * LOG2E_RAW) >> FRAC_BITS
    n = u >> FRAC_BITS
    f = u & (ONE - 1)
    j = f >> 8
    r = f & 0xFF
    base = EXP2_TABLE[j]
    val = base + (((EXP2_TABLE[j + 1] - base) * r) >> 8)
    if n >= 0:
        if n >= 15:
            raise Overflow(f"exp({t_raw / ONE:.3f}) exceeds Q16.16 range")
        return check_raw(val << n)
    n = -n
    if n >= 40:
        return 0
    return val >> n


def ln_raw(p_raw: int) -> int:
    """Natural log of a positive Q16.16 value, absolute error under 2^-8."""
    if p_raw <= 0:
        raise DomainError("ln domain is p > 0")
    nbits = p_raw.bit_length()
    e = nbits - 1 - FRAC_BITS
    if e <= 0:
        m = p_raw << (-e)
    else:
        m = p_raw >> e
    f = m - ONE  # mantissa fraction in [0, 65536)
    j = f >> 8
    r = f & 0xFF
    base = LN1P_TABLE[j]
    lnm = base + (((LN1P_TABLE[j + 1] - base) * r) >> 8)
    return e * LN2_RAW + lnm


def fx_ln(p: FixedScalar) -> FixedScalar:
    return FixedScalar(ln_raw(p.raw))


def sqrt_raw(x_raw: int) -> int:
    """Floor square root of a Q16.16 value, as Q16.16."""
    if x_raw < 0:
        raise DomainError("sqrt domain is x >= 0")
    return math.isqrt(x_raw << FRAC_BITS)


def dist_raw(sq_sum: int) -> int:
    """Euclidean distance from an exact sum of squared raw differences.

    The squared sum of Q16.16 differences is a Q32.32 quantity; its floor
    integer square root is exactly the Q16.16 distance.
    """
    if sq_sum < 0:
        raise DomainError("negative squared distance")
    d = math.isqrt(sq_sum)
    if d > RAW_MAX:
        raise Overflow("distance exceeds Q16.16 range")
    return d


def fx_softmax(logits: FixedTensor) -> FixedTensor:
    """Softmax over a 1-D logit vector; entries sum to exactly 1.0.

    Max-subtraction keeps every exponent nonpositive, then the floor shares
    floor(e_i * 2^16 / S) are topped up largest-remainder-first (ties to the
    lower index) until the total is exactly 2^16.
    """
    if len(logits.shape) != 1 or logits.size < 1:
        raise DomainError("softmax expects a non-empty 1-D tensor")
    raws = [int(v) for v in logits.flat()]
    top = max(raws)
    exps = [exp_raw(t - top) for t in raws]
    total = sum(exps)
    shares = [(e << FRAC_BITS) // total for e in exps]
    remainders = [(e << FRAC_BITS) % total for e in exps]
    deficit = ONE - sum(shares)
    if deficit:
        order = sorted(range(len(shares)), key=lambda i: (-remainders[i], i))
        for i in order[:deficit]:
            shares[i] += 1
    return FixedTensor.from_raw(np.asarray(shares, dtype=np.int64))
