"""Sinusoid datasets split into 19 source and 12 target samples.

A sequence with ``w`` waves over ``L`` samples has value ``sin(2*pi*w*t/L)``
at index ``t``. Three dataset kinds are provided:

* ``type1``: the single ``w = 1`` sequence, repeated.
* ``type2``: round-robin over a fixed list of wave counts.
* ``type3``: wave counts drawn uniformly from ``(0, w_max)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .models import make_rng

SEQ_LEN = 31
SRC_LEN = 19
TGT_LEN = SEQ_LEN - SRC_LEN


class DatasetSpecError(ValueError):
    pass


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class SequencePair:
    freq: float
    src: np.ndarray
    tgt: np.ndarray

    @property
    def full(self) -> np.ndarray:
        return np.concatenate([self.src, self.tgt])


@dataclass
class DatasetSpec:
    kind: str = "type1"
    L: int = SEQ_LEN
    w_list: list[float] = field(default_factory=lambda: [0.0, 1.0, 2.0, 3.0])
    w_max: float = 3.0
    n_train: int = 100
    n_test: int = 30
    repeat: int = 100
    seed: int = 0
    src_len: int = SRC_LEN

    def __post_init__(self):
        if self.kind not in ("type1", "type2", "type3"):
            raise DatasetSpecError(f"unknown dataset kind {self.kind!r}")
        if not 1 <= self.src_len < self.L:
            raise DatasetSpecError(f"src_len must lie in [1, {self.L}), got {self.src_len}")
        if self.kind == "type2" and not self.w_list:
            raise DatasetSpecError("type2 needs a nonempty w_list")
        if self.kind == "type3" and not self.w_max > 0:
            raise DatasetSpecError("type3 needs w_max > 0")


def generate_sinusoid(w: float, L: int = SEQ_LEN) -> np.ndarray:
    if L < 1:
        raise ValueError("L must be >= 1")
    t = np.arange(L, dtype=np.float64)
    return np.sin(2.0 * np.pi * w * t / L)


def make_pair(w: float, L: int = SEQ_LEN, src_len: int = SRC_LEN) -> SequencePair:
    y = generate_sinusoid(w, L)
    return SequencePair(float(w), y[:src_len], y[src_len:])


def build_dataset(spec: DatasetSpec) -> tuple[list[SequencePair], list[SequencePair]]:
    """Return ``(train, test)`` lists of :class:`SequencePair`."""
    pair = lambda w: make_pair(w, spec.L, spec.src_len)  # noqa: E731
    if spec.kind == "type1":
        one = pair(1.0)
        return [one] * spec.repeat, [one] * spec.repeat
    if spec.kind == "type2":
        ws = spec.w_list
        train = [pair(ws[i % len(ws)]) for i in range(spec.n_train)]
        test = [pair(ws[i % len(ws)]) for i in range(spec.n_test)]
        return train, test
    rng = make_rng(spec.seed)
    draws = _open_uniform(rng, spec.w_max, spec.n_train + spec.n_test)
    train = [pair(w) for w in draws[: spec.n_train]]
    test = [pair(w) for w in draws[spec.n_train :]]
    return train, test


def _open_uniform(rng: np.random.Generator, high: float, n: int) -> np.ndarray:
    # Generator.uniform is [low, high); redraw the (measure-zero) zeros so the interval is open
    out = rng.uniform(0.0, high, size=n)
    while np.any(out == 0.0):
        out[out == 0.0] = rng.uniform(0.0, high, size=int(np.sum(out == 0.0)))
    return out


def stack(pairs: list[SequencePair]) -> tuple[np.ndarray, np.ndarray]:
    """Arrays ``src [S, B, 1]`` and ``tgt [T, B, 1]`` in the seq-batch-feature layout."""
    src = np.stack([p.src for p in pairs], axis=1)[:, :, None]
    tgt = np.stack([p.tgt for p in pairs], axis=1)[:, :, None]
    return src, tgt


# serialization ------------------------------------------------------------------


def write_dataset(pairs: list[SequencePair], path, src_len: Optional[int] = None) -> None:
    """CSV: header ``freq,y0,...,y{L-1}``, one sequence per row."""
    if not pairs:
        raise ValueError("refusing to write an empty dataset")
    L = len(pairs[0].full)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["freq"] + [f"y{t}" for t in range(L)])
        for p in pairs:
            writer.writerow([repr(p.freq)] + [repr(float(v)) for v in p.full])


def read_dataset(path, src_len: int = SRC_LEN, L: int = SEQ_LEN) -> list[SequencePair]:
    pairs = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) != L + 1 or header[0] != "freq":
            raise DatasetFormatError(f"{path}: expected a header 'freq' plus {L} sample columns")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != L + 1:
                raise DatasetFormatError(f"{path}:{lineno}: expected {L + 1} columns, got {len(row)}")
            try:
                values = np.array([float(v) for v in row])
            except ValueError as exc:
                raise DatasetFormatError(f"{path}:{lineno}: {exc}") from None
            pairs.append(SequencePair(values[0], values[1 : src_len + 1], values[src_len + 1 :]))
    if not pairs:
        raise DatasetFormatError(f"{path}: no sequences")
    return pairs
