"""Bit and symbol sequence generation.

PRBS patterns come from a Fibonacci LFSR, so the output obeys
``b[n] = XOR(b[n - t] for t in taps)`` at every cyclic position of one
period. Random patterns use numpy's PCG64 generator; the algorithm name is
carried in the provenance so result files can state it.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Optional

import numpy as np

RNG_ALGORITHM = "numpy-PCG64"

# symbol index -> (msb, lsb)
GRAY_MAP: dict[int, tuple[int, ...]] = {0: (0, 0), 1: (0, 1), 2: (1, 1), 3: (1, 0)}
BINARY_MAP: dict[int, tuple[int, ...]] = {0: (0,), 1: (1,)}


class SequenceError(ValueError):
    """Raised for invalid generator specs or incompatible sequences."""


@dataclass(frozen=True)
class PrbsSpec:
    order: int
    taps: tuple[int, ...]
    seed: Optional[int] = None  # None -> all-ones register

    def __post_init__(self):
        if self.order < 2:
            raise SequenceError(f"PRBS order must be >= 2, got {self.order}")
        taps = tuple(sorted(set(int(t) for t in self.taps), reverse=True))
        if self.order not in taps:
            raise SequenceError(f"taps {taps} must include the order {self.order}")
        if any(t < 1 or t > self.order for t in taps):
            raise SequenceError(f"taps {taps} out of range 1..{self.order}")
        object.__setattr__(self, "taps", taps)
        seed = (1 << self.order) - 1 if self.seed is None else int(self.seed)
        if seed <= 0 or seed >= (1 << self.order):
            raise SequenceError(f"seed {seed:#x} is not a nonzero {self.order}-bit state")
        object.__setattr__(self, "seed", seed)

    @property
    def name(self) -> str:
        return f"prbs{self.order}"


PRBS7 = PrbsSpec(order=7, taps=(7, 6))
PRBS15 = PrbsSpec(order=15, taps=(15, 14))
BUILTIN_PRBS = {"prbs7": PRBS7, "prbs15": PRBS15}


@dataclass(frozen=True)
class Provenance:
    kind: str  # "prbs" | "random" | "repeated-random"
    order: Optional[int] = None
    taps: Optional[tuple[int, ...]] = None
    seed: Optional[int] = None
    extended: bool = False
    algorithm: Optional[str] = None

    def describe(self) -> str:
        if self.kind == "prbs":
            return f"prbs{self.order}" + ("+0" if self.extended else "")
        return self.kind


@dataclass(frozen=True)
class BitSequence:
    bits: np.ndarray
    provenance: Provenance
    period: Optional[int] = None

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.uint8)
        if bits.ndim != 1:
            raise SequenceError("bits must be one-dimensional")
        if bits.size and bits.max() > 1:
            raise SequenceError("bits must be 0 or 1")
        object.__setattr__(self, "bits", bits)
        if self.period is not None and self.period < 1:
            raise SequenceError("period must be positive")

    def __len__(self) -> int:
        return int(self.bits.size)


@dataclass(frozen=True)
class SymbolSequence:
    symbols: np.ndarray
    M: int
    bit_map: Mapping[int, tuple[int, ...]] = field(default_factory=lambda: dict(BINARY_MAP))
    provenance: Optional[Provenance] = None
    period: Optional[int] = None

    def __post_init__(self):
        symbols = np.asarray(self.symbols, dtype=np.int64)
        if symbols.size and (symbols.min() < 0 or symbols.max() >= self.M):
            raise SequenceError(f"symbol indices must lie in 0..{self.M - 1}")
        if sorted(self.bit_map) != list(range(self.M)):
            raise SequenceError("bit_map must cover every symbol index")
        words = set(self.bit_map.values())
        if len(words) != self.M:
            raise SequenceError("bit_map must be a bijection")
        object.__setattr__(self, "symbols", symbols)

    def __len__(self) -> int:
        return int(self.symbols.size)

    @property
    def bits_per_symbol(self) -> int:
        return len(self.bit_map[0])

    def bit_table(self) -> np.ndarray:
        """Array ``table[s]`` holding the bit tuple of symbol ``s``."""
        return np.array([self.bit_map[s] for s in range(self.M)], dtype=np.uint8)

    @classmethod
    def from_bits(cls, seq: BitSequence) -> "SymbolSequence":
        return cls(seq.bits.astype(np.int64), 2, dict(BINARY_MAP), seq.provenance, seq.period)


def lfsr_generate(spec: PrbsSpec) -> BitSequence:
    """One full period (``2**order - 1`` bits) of the m-sequence for `spec`.

    The first ``order`` output bits are the seed, most significant bit first;
    every later bit is the XOR of the bits ``t`` places back for each tap ``t``.
    """
    n = spec.order
    period = (1 << n) - 1
    out = np.empty(period, dtype=np.uint8)
    for k in range(n):
        out[k] = (spec.seed >> (n - 1 - k)) & 1
    taps = spec.taps
    for i in range(n, period):
        b = 0
        for t in taps:
            b ^= out[i - t]
        out[i] = b
    prov = Provenance("prbs", order=n, taps=spec.taps, seed=spec.seed)
    return BitSequence(out, prov, period=period)


def _zero_run_start(bits: np.ndarray, run: int) -> int:
    """Start index of the first cyclic run of `run` zeros."""
    ext = np.concatenate([bits, bits[: run - 1]])
    windows = np.lib.stride_tricks.sliding_window_view(ext, run)
    hits = np.flatnonzero(~windows.any(axis=1))
    if hits.size == 0:
        raise SequenceError(f"no run of {run} zeros found")
    return int(hits[0])


def extend_with_zero(seq: BitSequence) -> BitSequence:
    """Pad one PRBS period to ``2**N`` bits by lengthening its zero run.

    The extra zero goes directly after the (unique) run of ``N - 1`` zeros,
    so the padded cycle contains every N-bit word exactly once.
    """
    prov = seq.provenance
    if prov.kind != "prbs" or prov.order is None:
        raise SequenceError("extend_with_zero expects a PRBS sequence")
    n = prov.order
    if len(seq) != (1 << n) - 1:
        raise SequenceError(f"expected one period of {(1 << n) - 1} bits, got {len(seq)}")
    if prov.extended:
        raise SequenceError("sequence is already extended")
    start = _zero_run_start(seq.bits, n - 1)
    pos = (start + n - 1) % len(seq) if start + n - 1 != len(seq) else len(seq)
    bits = np.insert(seq.bits, pos, 0)
    return BitSequence(bits, replace(prov, extended=True), period=1 << n)


def prbs_pattern(name_or_spec: str | PrbsSpec, extended: bool = True) -> BitSequence:
    spec = BUILTIN_PRBS[name_or_spec] if isinstance(name_or_spec, str) else name_or_spec
    seq = lfsr_generate(spec)
    return extend_with_zero(seq) if extended else seq


def random_bits(n: int, rng_seed: int) -> BitSequence:
    if n < 1:
        raise SequenceError(f"random_bits needs n >= 1, got {n}")
    rng = np.random.Generator(np.random.PCG64(rng_seed))
    bits = rng.integers(0, 2, size=n, dtype=np.uint8)
    return BitSequence(bits, Provenance("random", seed=rng_seed, algorithm=RNG_ALGORITHM))


def repeat_to_length(unit: BitSequence, total: int) -> BitSequence:
    """Cyclically repeat `unit` and cut the result to `total` bits."""
    if len(unit) == 0:
        raise SequenceError("cannot repeat an empty unit")
    if total < len(unit):
        raise SequenceError(f"total {total} shorter than unit length {len(unit)}")
    bits = np.resize(unit.bits, total)
    return BitSequence(bits, unit.provenance, period=len(unit))


def repeated_random_unit(length: int, rng_seed: int) -> BitSequence:
    unit = random_bits(length, rng_seed)
    return BitSequence(unit.bits, replace(unit.provenance, kind="repeated-random"), period=length)


def pam4_from_bit_streams(
    a: BitSequence,
    b: BitSequence,
    shift: int,
    bit_map: Mapping[int, tuple[int, ...]] = GRAY_MAP,
) -> SymbolSequence:
    """Combine two bit streams into PAM4 symbols.

    ``symbol[i] = map(a[i], b[(i + shift) % len(b)])``.  Passing the same
    stream twice with a zero shift is rejected since it yields only two levels.
    """
    if len(a) != len(b):
        raise SequenceError(f"stream lengths differ: {len(a)} vs {len(b)}")
    if len(a) == 0:
        raise SequenceError("empty streams")
    b_shifted = np.roll(b.bits, -shift)
    if np.array_equal(a.bits, b_shifted):
        raise SequenceError("shift aligns identical streams; symbols would collapse to 2 levels")
    lookup = np.zeros((2, 2), dtype=np.int64)
    for sym, (hi, lo) in bit_map.items():
        lookup[hi, lo] = sym
    symbols = lookup[a.bits, b_shifted]
    period = None
    if a.period is not None and b.period is not None:
        period = int(np.lcm(a.period, b.period))
        if len(a) % period:
            period = None
    return SymbolSequence(symbols, 4, dict(bit_map), a.provenance, period)
