"""Result rows, BER confidence intervals and SNR-gap interpolation."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Optional, Sequence

CSV_COLUMNS = (
    "experiment",
    "kind",
    "train_pattern",
    "train_pattern_len",
    "train_repeated",
    "eval_pattern",
    "eval_pattern_len",
    "eval_repeated",
    "same_pattern",
    "window_L",
    "topology",
    "train_size",
    "eval_size",
    "train_snr_db",
    "snr_db",
    "ber",
    "bit_errors",
    "bits_counted",
    "ci95",
    "seed",
    "wall_time_s",
)

# Disclosure fields every row must carry: pattern type and length, whether
# it repeats, set sizes, and whether training and evaluation patterns match.
DISCLOSURE_FIELDS = (
    "train_pattern",
    "train_pattern_len",
    "train_repeated",
    "eval_pattern",
    "eval_pattern_len",
    "eval_repeated",
    "same_pattern",
    "train_size",
    "eval_size",
)

UNRELIABLE_ERRORS = 100


class IncompleteRecord(ValueError):
    pass


class NoCrossing(ValueError):
    pass


@dataclass(frozen=True)
class BerEstimate:
    ber: float
    ci95: float
    errors: int
    bits: int

    @property
    def unreliable(self) -> bool:
        return self.errors < UNRELIABLE_ERRORS

    @property
    def low(self) -> float:
        return max(0.0, self.ber - self.ci95)

    @property
    def high(self) -> float:
        return min(1.0, self.ber + self.ci95)


def estimate_ber(errors: int, bits: int) -> BerEstimate:
    if bits <= 0:
        raise ValueError("bits must be positive")
    if errors < 0 or errors > bits:
        raise ValueError(f"error count {errors} outside 0..{bits}")
    ber = errors / bits
    return BerEstimate(ber, 1.96 * math.sqrt(ber * (1.0 - ber) / bits), int(errors), int(bits))


def cis_overlap(a: BerEstimate, b: BerEstimate) -> bool:
    return a.low <= b.high and b.low <= a.high


@dataclass
class ResultRecord:
    experiment: str
    kind: str
    train_pattern: str
    train_pattern_len: int
    train_repeated: str
    eval_pattern: str
    eval_pattern_len: int
    eval_repeated: str
    same_pattern: str
    window_L: int
    topology: str
    train_size: int
    eval_size: int
    train_snr_db: float
    snr_db: float
    ber: float
    bit_errors: int
    bits_counted: int
    ci95: float
    seed: int
    wall_time_s: float

    def estimate(self) -> BerEstimate:
        return BerEstimate(self.ber, self.ci95, self.bit_errors, self.bits_counted)

    def check(self) -> None:
        """Raise IncompleteRecord unless every disclosure field is filled in."""
        for name in DISCLOSURE_FIELDS:
            value = getattr(self, name)
            if value is None or (isinstance(value, str) and not value.strip()):
                raise IncompleteRecord(f"{self.experiment}: field {name!r} is empty")
        if self.bits_counted <= 0:
            raise IncompleteRecord(f"{self.experiment}: no bits counted")
        if not math.isclose(self.ber, self.bit_errors / self.bits_counted, rel_tol=1e-12, abs_tol=0):
            raise IncompleteRecord(f"{self.experiment}: ber != bit_errors / bits_counted")

    def as_row(self) -> dict:
        return {k: _fmt(v) for k, v in asdict(self).items()}


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def flag(value: Optional[bool]) -> str:
    return "n/a" if value is None else ("true" if value else "false")


_TYPES = {f.name: f.type for f in fields(ResultRecord)}


def _parse(name: str, text: str):
    kind = _TYPES[name]
    if kind in ("int", int):
        return int(text)
    if kind in ("float", float):
        return float(text)
    return text


class CsvSink:
    """Append-only CSV writer; every row is validated before it is written."""

    def __init__(self, path=None, stream=None):
        self._own = path is not None
        self._fh = open(path, "w", newline="") if path is not None else stream
        self._writer = csv.DictWriter(self._fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        self._writer.writeheader()

    def write(self, records: Iterable[ResultRecord]) -> None:
        for rec in records:
            rec.check()
            self._writer.writerow(rec.as_row())
        self._fh.flush()

    def close(self) -> None:
        if self._own:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_csv(records: Sequence[ResultRecord], path) -> None:
    with CsvSink(path) as sink:
        sink.write(records)


def records_to_csv_text(records: Sequence[ResultRecord]) -> str:
    buf = io.StringIO()
    CsvSink(stream=buf).write(records)
    return buf.getvalue()


def read_csv(path) -> list[ResultRecord]:
    with open(Path(path), newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [ResultRecord(**{k: _parse(k, v) for k, v in row.items()}) for row in reader]


def curves(records: Iterable[ResultRecord]) -> dict[str, list[tuple[float, float]]]:
    """Group rows into ``{experiment: [(snr_db, ber), ...]}`` sorted by SNR."""
    out: dict[str, list[tuple[float, float]]] = {}
    for r in records:
        out.setdefault(r.experiment, []).append((r.snr_db, r.ber))
    return {k: sorted(v) for k, v in out.items()}


@dataclass(frozen=True)
class GapReport:
    reference: str
    comparison: str
    target_ber: float
    delta_snr_db: Optional[float]
    reference_snr_db: Optional[float]
    comparison_snr_db: Optional[float]

    @property
    def crossed(self) -> bool:
        return self.delta_snr_db is not None


def crossing_snr(curve: Sequence[tuple[float, float]], target_ber: float) -> Optional[float]:
    """SNR where the curve first falls to `target_ber`, linear in log10(BER).

    Points with zero BER carry no log-domain information and are skipped.
    Returns None when the sweep never brackets the target.
    """
    pts = [(s, b) for s, b in sorted(curve) if b > 0]
    lt = math.log10(target_ber)
    for (s0, b0), (s1, b1) in zip(pts, pts[1:]):
        if b0 >= target_ber >= b1:
            l0, l1 = math.log10(b0), math.log10(b1)
            if l0 == l1:
                return s0
            return s0 + (s1 - s0) * (l0 - lt) / (l0 - l1)
    return None


def compute_gap(
    reference: Sequence[tuple[float, float]],
    comparison: Sequence[tuple[float, float]],
    target_ber: float,
    reference_id: str = "reference",
    comparison_id: str = "comparison",
) -> GapReport:
    """SNR the reference curve needs minus what the comparison curve needs."""
    sr = crossing_snr(reference, target_ber)
    sc = crossing_snr(comparison, target_ber)
    delta = None if sr is None or sc is None else sr - sc
    return GapReport(reference_id, comparison_id, target_ber, delta, sr, sc)
