from typing import Optional

import numpy as np


def validate_square(matrix: np.ndarray, name: str = "matrix") -> tuple[bool, Optional[str]]:
    """Validate a finite square 2-D array"""
    if not isinstance(matrix, np.ndarray) or matrix.ndim != 2:
        return False, f"{name} must be a 2-D array"

    if matrix.shape[0] != matrix.shape[1]:
        return False, f"{name} must be square, got shape {matrix.shape}"

    if not np.all(np.isfinite(matrix)):
        return False, f"{name} has non-finite entries"

    return True, None


def validate_gain_row(K: np.ndarray, dim: int) -> tuple[bool, Optional[str]]:
    """Validate a 1 x dim feedback gain row"""
    if not isinstance(K, np.ndarray) or K.ndim != 2:
        return False, "gain must be a 2-D row array"

    if K.shape != (1, dim):
        return False, f"gain must have shape (1, {dim}), got {K.shape}"

    if not np.all(np.isfinite(K)):
        return False, "gain has non-finite entries"

    return True, None


def validate_same_shape(first: np.ndarray, second: np.ndarray,
                        names: tuple[str, str] = ("A", "A1")) -> tuple[bool, Optional[str]]:
    """Validate two matrices of identical shape"""
    if first.shape != second.shape:
        return False, f"{names[0]} {first.shape} and {names[1]} {second.shape} must have the same shape"

    return True, None


def validate_hold_length(delta: float, t_step: float) -> tuple[bool, Optional[str]]:
    """Validate a hold length against the integration step"""
    try:
        delta = float(delta)
    except (TypeError, ValueError):
        return False, "hold length must be a number"

    if not np.isfinite(delta) or delta <= 0:
        return False, f"hold length must be positive, got {delta}"

    # tolerate float noise such as 3 * 0.01
    if delta < t_step * (1 - 1e-9):
        return False, f"hold length {delta} is shorter than the integration step {t_step}"

    return True, None


def validate_search_range(low: float, high: float, granularity: float) -> tuple[bool, Optional[str]]:
    """Validate a hold-limit search grid"""
    if granularity <= 0:
        return False, "granularity must be positive"

    if low < 0 or high <= low:
        return False, f"search range must satisfy 0 <= low < high, got ({low}, {high})"

    if high - low < granularity:
        return False, "search range is narrower than one granularity step"

    return True, None
