# utils.py

import json
from fractions import Fraction

from config import H0_PRESETS


def ceil_fraction(n: int, num: int, den: int) -> int:
    """Smallest integer >= n*num/den, without going through floats."""
    return -((-n * num) // den)


def default_h0(n: int) -> int:
    return ceil_fraction(n, *H0_PRESETS["two-thirds"])


def preset_threshold(n: int, preset: str) -> int:
    """
    Threshold for a named preset ("two-thirds", "seven-ninths", "five-sixths").
    Raises KeyError for an unknown preset name.
    """
    num, den = H0_PRESETS[preset]
    return ceil_fraction(n, num, den)


def as_fraction(x) -> Fraction:
    """Exact rational for ints, Fractions, decimal strings and floats (via repr)."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, float):
        return Fraction(repr(x))
    return Fraction(str(x))


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def parse_seeds(spec) -> list[int]:
    """
    Accepts "1..5", "3", "1,4,9" or a list of ints.
    Ranges are inclusive.
    """
    if isinstance(spec, int):
        return [spec]
    if isinstance(spec, list):
        return [int(s) for s in spec]
    text = str(spec).strip()
    seeds: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            lo, hi = part.split("..", 1)
            lo_i, hi_i = int(lo), int(hi)
            if hi_i < lo_i:
                raise ValueError(f"empty seed range {part!r}")
            seeds.extend(range(lo_i, hi_i + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise ValueError("no seeds given")
    return seeds
