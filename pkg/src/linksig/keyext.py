"""Link-signature key extraction: quantize a CIR, encode levels as bits, cut a key."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

LEVELS = 32
BITS_PER_LEVEL = 5
DEFAULT_KEY_LENGTH = 75


class KeyExtractionError(ValueError):
    pass


class ReconciliationError(RuntimeError):
    """Both parties kept disagreeing for ``rounds`` re-measurements."""

    def __init__(self, rounds: int, agreement: float):
        super().__init__(f"keys still differ after {rounds} rounds (bit agreement {agreement:.4f})")
        self.rounds = rounds
        self.agreement = agreement


@dataclass(frozen=True, eq=False)
class QuantizedSignature:
    levels: np.ndarray

    def __post_init__(self):
        lv = np.array(self.levels, dtype=np.int64).reshape(-1)
        if lv.size and (lv.min() < 0 or lv.max() > LEVELS - 1):
            raise KeyExtractionError("levels must lie in [0, 31]")
        lv.setflags(write=False)
        object.__setattr__(self, "levels", lv)

    @property
    def source_length(self) -> int:
        return len(self.levels)

    def __len__(self):
        return len(self.levels)

    def __eq__(self, other):
        if not isinstance(other, QuantizedSignature):
            return NotImplemented
        return np.array_equal(self.levels, other.levels)


@dataclass(frozen=True, eq=False)
class BitKey:
    bits: np.ndarray

    def __post_init__(self):
        b = np.array(self.bits, dtype=np.uint8).reshape(-1)
        if np.any(b > 1):
            raise KeyExtractionError("bits must be 0 or 1")
        b.setflags(write=False)
        object.__setattr__(self, "bits", b)

    @property
    def length(self) -> int:
        return len(self.bits)

    def __len__(self):
        return len(self.bits)

    def __eq__(self, other):
        if not isinstance(other, BitKey):
            return NotImplemented
        return np.array_equal(self.bits, other.bits)

    def to_ascii(self) -> str:
        return "".join("1" if b else "0" for b in self.bits)

    @classmethod
    def from_ascii(cls, text: str) -> "BitKey":
        text = text.strip()
        if set(text) - {"0", "1"}:
            raise KeyExtractionError("key text may only contain 0 and 1")
        return cls([int(c) for c in text])


def quantization_levels(taps) -> np.ndarray:
    """Vectorized level computation; ``taps`` may be (..., K)."""
    taps = np.asarray(getattr(taps, "taps", taps), dtype=float)
    peak = taps.max(axis=-1, keepdims=True)
    if np.any(~(peak > 0)):
        raise KeyExtractionError("cannot quantize an all-zero CIR")
    # floor(x + 0.5) rounds exact halves up on every platform.
    levels = np.floor(LEVELS * taps / peak + 0.5).astype(np.int64)
    return np.clip(levels, 0, LEVELS - 1)


def quantize(cir) -> QuantizedSignature:
    """Normalize by the largest tap, scale by 32, round half up and clamp to [0, 31]."""
    taps = np.asarray(getattr(cir, "taps", cir), dtype=float)
    if taps.ndim != 1:
        raise KeyExtractionError("quantize expects a single CIR")
    return QuantizedSignature(quantization_levels(taps))


def to_bits(q) -> np.ndarray:
    levels = np.asarray(getattr(q, "levels", q), dtype=np.int64)
    shifts = np.arange(BITS_PER_LEVEL - 1, -1, -1)
    return ((levels[:, None] >> shifts[None, :]) & 1).astype(np.uint8).reshape(-1)


def from_bits(bits) -> QuantizedSignature:
    bits = np.asarray(getattr(bits, "bits", bits), dtype=np.int64)
    if len(bits) % BITS_PER_LEVEL:
        raise KeyExtractionError("bit count must be a multiple of 5")
    weights = 1 << np.arange(BITS_PER_LEVEL - 1, -1, -1)
    return QuantizedSignature(bits.reshape(-1, BITS_PER_LEVEL) @ weights)


def cut_key(bits, key_length: int = DEFAULT_KEY_LENGTH, offset: int = 0) -> BitKey:
    bits = np.asarray(getattr(bits, "bits", bits))
    if key_length < 1 or offset < 0 or offset + key_length > len(bits):
        raise KeyExtractionError(
            f"cannot cut {key_length} bits at offset {offset} from {len(bits)} bits"
        )
    return BitKey(bits[offset : offset + key_length])


def extract_key(cir, key_length: int = DEFAULT_KEY_LENGTH, offset: int = 0) -> BitKey:
    return cut_key(to_bits(quantize(cir)), key_length, offset)


def bit_agreement_rate(key_a, key_b) -> float:
    a = np.asarray(getattr(key_a, "bits", key_a))
    b = np.asarray(getattr(key_b, "bits", key_b))
    if a.shape != b.shape:
        raise KeyExtractionError(f"key lengths differ: {a.size} vs {b.size}")
    if a.size == 0:
        raise KeyExtractionError("empty keys")
    return float(np.count_nonzero(a == b)) / a.size


@dataclass(frozen=True)
class ReconcileResult:
    key: BitKey
    rounds: int


def reconcile(
    party_a_sampler: Callable[[int], object],
    party_b_sampler: Callable[[int], object],
    key_length: int = DEFAULT_KEY_LENGTH,
    max_rounds: int = 20,
    offset: int = 0,
) -> ReconcileResult:
    """Re-measure until both parties cut the same key.

    Each sampler is called with the round index and returns a fresh CIR.
    Verification is key equality.  Raises ReconciliationError carrying the
    final bit-agreement rate when ``max_rounds`` rounds all disagree.
    """
    if max_rounds < 1:
        raise KeyExtractionError("max_rounds must be >= 1")
    agreement = 0.0
    for rnd in range(max_rounds):
        key_a = extract_key(party_a_sampler(rnd), key_length, offset)
        key_b = extract_key(party_b_sampler(rnd), key_length, offset)
        if key_a == key_b:
            return ReconcileResult(key_a, rnd + 1)
        agreement = bit_agreement_rate(key_a, key_b)
    raise ReconciliationError(max_rounds, agreement)


def write_key(key: BitKey, path) -> None:
    Path(path).write_text(key.to_ascii() + "\n")


def read_key(path) -> BitKey:
    return BitKey.from_ascii(Path(path).read_text())


def write_quantized_csv(signatures, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for q in signatures:
            writer.writerow([int(v) for v in getattr(q, "levels", q)])


def read_quantized_csv(path) -> list[QuantizedSignature]:
    out = []
    with open(Path(path), newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            try:
                out.append(QuantizedSignature([int(v) for v in row]))
            except ValueError as exc:
                raise KeyExtractionError(f"line {lineno}: {exc}") from None
    return out
