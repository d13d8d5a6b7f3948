"""Fixed-point integer arithmetic helpers.

All geometry in this package is integer millimeters / milliseconds / degrees;
trigonometric values are scaled by 10^4.  The single rounding rule used
everywhere is round-half-away-from-zero.
"""

import numpy as np

SCALE = 10_000
SQRT2_X1E4 = 14_142


def round_div(num: int, den: int) -> int:
    """Divide num/den rounding half away from zero.  den must be positive."""
    if num >= 0:
        return (num + den // 2) // den
    return -((-num + den // 2) // den)


def round_div_arr(num, den: int):
    """Vectorized round_div over an int64 numpy array (positive den)."""
    num = np.asarray(num, dtype=np.int64)
    half = den // 2
    mag = (np.abs(num) + half) // den
    return np.where(num >= 0, mag, -mag)


def mul_fx(value: int, factor_x1e4: int) -> int:
    """Multiply an integer by a 10^4-scaled fixed-point factor, rounded."""
    return round_div(value * factor_x1e4, SCALE)
