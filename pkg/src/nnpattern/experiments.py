"""Experiment runners: train a receiver on one pattern, evaluate it on others.

Every random quantity (patterns, noise, weight init, shuffling) gets its own
seed derived from the master seed and a label, so reruns are bit-exact and
training and evaluation noise can never coincide.
"""

from __future__ import annotations

import hashlib
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import channel, imdd, mlp
from .records import ResultRecord, estimate_ber, flag
from .seqgen import (
    BINARY_MAP,
    GRAY_MAP,
    BitSequence,
    SymbolSequence,
    pam4_from_bit_streams,
    prbs_pattern,
    random_bits,
    repeat_to_length,
    repeated_random_unit,
)

log = logging.getLogger(__name__)

PATTERNS = ("prbs7", "prbs15", "random", "repeated-random")
TOPOLOGIES = {"8": (8,), "64x64": (64, 64)}
KINDS = ("awgn-sweep-L", "awgn-sweep-snr", "repeated-random", "imdd")
MIN_EVAL_SIZE = 1 << 16
SWEEP_L_GRID = (5, 9, 13, 17, 25, 33, 65, 129)
PAM4_PRBS_SHIFT = 1 << 14


class InvalidSpec(ValueError):
    pass


def derive_seed(master: int, *labels) -> int:
    """63-bit seed from a BLAKE2b hash of the master seed and `labels`."""
    text = repr((int(master),) + tuple(str(x) for x in labels)).encode()
    return int.from_bytes(hashlib.blake2b(text, digest_size=8).digest(), "big") >> 1


def parse_topology(name: str) -> tuple[int, ...]:
    if name in TOPOLOGIES:
        return TOPOLOGIES[name]
    try:
        return tuple(int(p) for p in name.split("x"))
    except ValueError:
        raise InvalidSpec(f"bad topology {name!r}") from None


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str
    train_pattern: str = "prbs7"
    eval_pattern: str = "random"
    windows: tuple[int, ...] = (13,)
    topologies: tuple[str, ...] = ("8",)
    snr_points: tuple[float, ...] = (9.0,)
    train_size: int = 1 << 19
    eval_size: int = MIN_EVAL_SIZE
    train_snr_db: Optional[float] = 10.0  # None: train at each evaluation SNR
    master_seed: int = 0
    unit_length: int = 128
    train: mlp.TrainConfig = field(default_factory=mlp.TrainConfig)
    link: imdd.ImddConfig = field(default_factory=imdd.ImddConfig)
    min_eval_size: int = MIN_EVAL_SIZE

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise InvalidSpec(f"unknown experiment kind {self.kind!r}")
        for p in (self.train_pattern, self.eval_pattern):
            if p not in PATTERNS:
                raise InvalidSpec(f"unknown pattern {p!r}")
        if not self.windows or any(L < 1 or L % 2 == 0 for L in self.windows):
            raise InvalidSpec(f"window lengths must be odd and positive: {self.windows}")
        for t in self.topologies:
            parse_topology(t)
        if not self.snr_points:
            raise InvalidSpec("no SNR points")
        if self.train_size < 1:
            raise InvalidSpec("train_size must be positive")
        if self.eval_size < self.min_eval_size:
            raise InvalidSpec(f"eval_size {self.eval_size} below the minimum {self.min_eval_size}")
        if self.kind == "imdd" and "repeated-random" in (self.train_pattern, self.eval_pattern):
            raise InvalidSpec("imdd runs use prbs or random symbol patterns")
        if self.kind == "repeated-random" and self.train_pattern != "repeated-random":
            raise InvalidSpec("repeated-random runs train on the repeated unit")
        if self.kind != "imdd" and self.train_snr_db is None:
            raise InvalidSpec("AWGN runs need a training SNR")
        if self.unit_length < 1:
            raise InvalidSpec("unit_length must be positive")

    def seed(self, *labels) -> int:
        return derive_seed(self.master_seed, *labels)


@dataclass
class RunResult:
    records: list[ResultRecord]
    trained: int = 0
    diverged: list[str] = field(default_factory=list)

    @property
    def all_diverged(self) -> bool:
        return self.trained > 0 and len(self.diverged) == self.trained


# -- patterns ---------------------------------------------------------------


@dataclass(frozen=True)
class Pattern:
    """A concrete pattern instance plus what gets disclosed about it."""

    kind: str
    length: int  # repeating unit, or total length if not repeated
    repeated: bool
    seed: Optional[int]


def pattern_length(kind: str, total: int, unit_length: int) -> int:
    return {"prbs7": 128, "prbs15": 1 << 15, "repeated-random": unit_length}.get(kind, total)


def make_pattern(kind: str, total: int, seed: Optional[int], unit_length: int = 128) -> BitSequence:
    if kind in ("prbs7", "prbs15"):
        return repeat_to_length(prbs_pattern(kind), total)
    if kind == "random":
        return random_bits(total, seed)
    if kind == "repeated-random":
        return repeat_to_length(repeated_random_unit(unit_length, seed), total)
    raise InvalidSpec(f"unknown pattern {kind!r}")


def _train_pattern(spec: ExperimentSpec, total: int) -> Pattern:
    kind = spec.train_pattern
    seed = spec.seed("pattern", "train", kind) if kind in ("random", "repeated-random") else None
    return Pattern(kind, pattern_length(kind, total, spec.unit_length), kind != "random", seed)


def _eval_patterns(spec: ExperimentSpec, train: Pattern, total: int) -> list[tuple[Pattern, bool]]:
    """Evaluation patterns paired with a same-as-training flag.

    Re-using a training pattern means the same PRBS or the same repeated
    unit; a random evaluation pattern is always a fresh draw.
    """
    out = []
    for role, kind in (("same", train.kind), ("other", spec.eval_pattern)):
        if role == "other" and kind == train.kind:
            continue
        if kind == "random":
            seed = spec.seed("pattern", "eval", role, kind)
            same = False
        elif kind == "repeated-random":
            same = kind == train.kind
            seed = train.seed if same else spec.seed("pattern", "eval", role, kind)
        else:
            seed, same = None, kind == train.kind
        if seed is not None and seed == train.seed and kind == "random":
            raise InvalidSpec("evaluation pattern would reuse the training draw")
        out.append((Pattern(kind, pattern_length(kind, total, spec.unit_length), kind != "random", seed), same))
    return out


def _base_row(spec: ExperimentSpec, train: Optional[Pattern], ev: Pattern, same: Optional[bool]) -> dict:
    return dict(
        kind=spec.kind,
        train_pattern=train.kind if train else "none",
        train_pattern_len=train.length if train else 0,
        train_repeated=flag(train.repeated) if train else "n/a",
        eval_pattern=ev.kind,
        eval_pattern_len=ev.length,
        eval_repeated=flag(ev.repeated),
        same_pattern=flag(same),
        eval_size=spec.eval_size,
        seed=spec.master_seed,
    )


def _row(base: dict, experiment: str, L: int, topo: str, train_size: int, train_snr: float,
         snr: float, errors: int, bits: int, wall: float) -> ResultRecord:
    est = estimate_ber(errors, bits)
    return ResultRecord(
        experiment=experiment,
        window_L=L,
        topology=topo,
        train_size=train_size,
        train_snr_db=float(train_snr),
        snr_db=float(snr),
        ber=est.ber,
        bit_errors=errors,
        bits_counted=bits,
        ci95=est.ci95,
        wall_time_s=round(wall, 3),
        **base,
    )


def _check_noise_seeds(train_seed: int, eval_seeds: Sequence[int]) -> None:
    if train_seed in eval_seeds:
        raise InvalidSpec("training and evaluation share a noise seed")


# -- AWGN ---------------------------------------------------------------------


def awgn_dataset(bits: BitSequence, L: int, snr_db: float, noise_seed: int) -> mlp.WindowedDataset:
    rx = channel.add_awgn(channel.modulate_binary(bits), channel.AwgnConfig(snr_db, noise_seed), bits)
    return mlp.make_windows(rx.samples, bits.bits, L)


def hard_errors(ds: mlp.WindowedDataset) -> int:
    centre = ds.windows[:, ds.center_offset]
    return int(np.count_nonzero((centre >= 0).astype(np.int64) != ds.labels))


def _awgn_task(spec: ExperimentSpec, L: int, topo: str) -> RunResult:
    t0 = time.perf_counter()
    tr = _train_pattern(spec, spec.train_size + L - 1)
    tag = (tr.kind, L, topo)
    train_noise = spec.seed("noise", "train", *tag)
    evals = _eval_patterns(spec, tr, spec.eval_size + L - 1)
    eval_noise = [spec.seed("noise", "eval", ev.kind, L, same) for ev, same in evals]
    _check_noise_seeds(train_noise, eval_noise)

    bits = make_pattern(tr.kind, spec.train_size + L - 1, tr.seed, spec.unit_length)
    train_ds = awgn_dataset(bits, L, spec.train_snr_db, train_noise)
    hidden = parse_topology(topo)
    model = mlp.init_model((L, *hidden, 2), spec.seed("init", *tag))
    cfg = mlp.TrainConfig(**{**spec.train.__dict__, "rng_seed": spec.seed("shuffle", *tag)})
    result = RunResult([], trained=1)
    try:
        model = mlp.train_nesterov(model, train_ds, cfg)
    except mlp.TrainingDiverged as exc:
        log.warning("training diverged for %s: %s", tag, exc)
        result.diverged.append(f"nn{topo}:{tr.kind}:L{L}")
        model = None
    del train_ds, bits
    train_wall = time.perf_counter() - t0
    log.info("trained %s in %.1fs", tag, train_wall)

    for (ev, same), noise in zip(evals, eval_noise):
        ebits = make_pattern(ev.kind, spec.eval_size + L - 1, ev.seed, spec.unit_length)
        base_nn = _base_row(spec, tr, ev, same)
        base_hd = _base_row(spec, None, ev, None)
        for snr in spec.snr_points:
            t1 = time.perf_counter()
            ds = awgn_dataset(ebits, L, snr, noise)
            n = len(ds)
            result.records.append(
                _row(base_hd, f"hard:{ev.kind}:L{L}", L, "none", 0, math.nan, snr,
                     hard_errors(ds), n, time.perf_counter() - t1)
            )
            if model is not None:
                _, errors, counted = mlp.classify_ber(model, ds, BINARY_MAP)
                result.records.append(
                    _row(base_nn, f"nn{topo}:{tr.kind}->{ev.kind}:L{L}", L, topo, spec.train_size,
                         spec.train_snr_db, snr, errors, counted, train_wall + time.perf_counter() - t1)
                )
    return result


# -- IMDD ---------------------------------------------------------------------


def pam4_symbols(kind: str, n: int, seed: Optional[int]) -> SymbolSequence:
    """PAM4 symbols from two Gray-mapped bit streams.

    PRBS symbols pair a PRBS with a half-period shifted copy of itself.
    """
    if kind in ("prbs7", "prbs15"):
        unit = prbs_pattern(kind)
        sym = pam4_from_bit_streams(unit, unit, len(unit) // 2)
        return SymbolSequence(np.resize(sym.symbols, n), 4, sym.bit_map, sym.provenance, len(unit))
    if kind == "random":
        a = random_bits(n, derive_seed(seed, "msb"))
        b = random_bits(n, derive_seed(seed, "lsb"))
        return pam4_from_bit_streams(a, b, 0)
    raise InvalidSpec(f"pattern {kind!r} not supported for PAM4")


def imdd_waveform(symbols: SymbolSequence, cfg: imdd.ImddConfig, snr_db: float, noise_seed: int) -> np.ndarray:
    """Received photocurrent; periodic patterns are propagated over one period and tiled."""
    period = symbols.period
    if period is not None and period < len(symbols):
        one = imdd.detected_waveform(symbols.symbols[:period], cfg).samples
        clean = imdd.Waveform(np.resize(one, len(symbols) * cfg.samples_per_symbol), cfg.sample_rate)
    else:
        clean = imdd.detected_waveform(symbols, cfg)
    return imdd.add_detector_noise(clean, snr_db, noise_seed).samples


def _symbols_for_windows(count: int, L: int, sps: int) -> int:
    return count + 2 * -(-((L - 1) // 2) // sps)


def _imdd_task(spec: ExperimentSpec, snr: float) -> RunResult:
    cfg = spec.link
    sps = cfg.samples_per_symbol
    L = spec.windows[0]
    topo = spec.topologies[0]
    hidden = parse_topology(topo)
    train_snr = snr if spec.train_snr_db is None else spec.train_snr_db
    n_eval = _symbols_for_windows(spec.eval_size, L, sps)
    result = RunResult([])

    pattern_train = _train_pattern(spec, spec.train_size)
    random_train = Pattern("random", spec.train_size, False, spec.seed("pattern", "train", "random"))
    trainings = [random_train] if pattern_train.kind == "random" else [random_train, pattern_train]

    random_eval = Pattern("random", spec.eval_size, False, spec.seed("pattern", "eval", "other", "random"))
    eval_cache: dict[str, tuple[Pattern, mlp.WindowedDataset]] = {}

    def eval_set(kind: str) -> tuple[Pattern, mlp.WindowedDataset]:
        if kind not in eval_cache:
            if kind == "random":
                pat = random_eval
            else:
                pat = Pattern(kind, pattern_length(kind, n_eval, spec.unit_length), True, None)
            noise = spec.seed("noise", "eval", kind, L, snr)
            sym = pam4_symbols(kind, n_eval, pat.seed)
            eval_cache[kind] = (pat, mlp.make_windows(imdd_waveform(sym, cfg, snr, noise), sym.symbols, L, sps))
        return eval_cache[kind]

    thresholds = None
    for tr in trainings:
        t0 = time.perf_counter()
        tag = (tr.kind, L, topo, train_snr)
        train_noise = spec.seed("noise", "train", *tag)
        evals = ["random"] if tr.kind == "random" else [tr.kind] + ([spec.eval_pattern] if spec.eval_pattern != tr.kind else [])
        _check_noise_seeds(train_noise, [spec.seed("noise", "eval", k, L, snr) for k in evals])
        sym = pam4_symbols(tr.kind, spec.train_size, tr.seed)
        wave = imdd_waveform(sym, cfg, train_snr, train_noise)
        train_ds = mlp.make_windows(wave, sym.symbols, L, sps)
        if tr.kind == "random":
            thresholds = imdd.fit_level_thresholds(wave[::sps], sym.symbols)
        model = mlp.init_model((L, *hidden, 4), spec.seed("init", *tag))
        tcfg = mlp.TrainConfig(**{**spec.train.__dict__, "rng_seed": spec.seed("shuffle", *tag)})
        result.trained += 1
        try:
            model = mlp.train_nesterov(model, train_ds, tcfg)
        except mlp.TrainingDiverged as exc:
            log.warning("training diverged for %s: %s", tag, exc)
            result.diverged.append(f"nn{topo}:{tr.kind}:snr{snr}")
            continue
        finally:
            del train_ds, wave
        train_wall = time.perf_counter() - t0
        log.info("trained %s in %.1fs", tag, train_wall)
        for kind in evals:
            t1 = time.perf_counter()
            ev, ds = eval_set(kind)
            _, errors, counted = mlp.classify_ber(model, ds, GRAY_MAP)
            same = kind == tr.kind and kind != "random"
            result.records.append(
                _row(_base_row(spec, tr, ev, same), f"nn{topo}:{tr.kind}->{kind}:L{L}", L, topo,
                     spec.train_size, train_snr, snr, errors, counted, train_wall + time.perf_counter() - t1)
            )

    t1 = time.perf_counter()
    ev, ds = eval_set("random")
    if thresholds is None:
        raise RuntimeError("no-NN thresholds need the random training set")
    decided = imdd.decide_levels(ds.windows[:, ds.center_offset], thresholds)
    errors, counted = mlp.symbol_bit_errors(decided, ds.labels, GRAY_MAP)
    result.records.append(
        _row(_base_row(spec, None, ev, None), "hard:random:L1", 1, "none", 0, math.nan, snr,
             errors, counted, time.perf_counter() - t1)
    )
    return result


# -- orchestration ------------------------------------------------------------


def _run_tasks(tasks: list[tuple[Callable, tuple]], workers: Optional[int]) -> RunResult:
    workers = workers or os.cpu_count() or 1
    if workers <= 1 or len(tasks) <= 1:
        parts = [fn(*args) for fn, args in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(fn, *args) for fn, args in tasks]
            parts = [f.result() for f in futures]
    out = RunResult([])
    for p in parts:
        out.records.extend(p.records)
        out.trained += p.trained
        out.diverged.extend(p.diverged)
    return out


def run_awgn_sweep_L(spec: ExperimentSpec, workers: Optional[int] = None) -> RunResult:
    """One model per window length, evaluated on the training pattern and a fresh one."""
    if spec.kind != "awgn-sweep-L":
        raise InvalidSpec(f"expected kind awgn-sweep-L, got {spec.kind}")
    spec.validate()
    return _run_tasks([(_awgn_task, (spec, L, spec.topologies[0])) for L in spec.windows], workers)


def run_awgn_sweep_snr(spec: ExperimentSpec, workers: Optional[int] = None) -> RunResult:
    if spec.kind != "awgn-sweep-snr":
        raise InvalidSpec(f"expected kind awgn-sweep-snr, got {spec.kind}")
    spec.validate()
    tasks = [(_awgn_task, (spec, L, t)) for L in spec.windows for t in spec.topologies]
    return _run_tasks(tasks, workers)


def run_repeated_random(spec: ExperimentSpec, workers: Optional[int] = None) -> RunResult:
    """Train on a repeated short random unit, evaluate on that unit and on fresh data."""
    if spec.kind != "repeated-random":
        raise InvalidSpec(f"expected kind repeated-random, got {spec.kind}")
    spec.validate()
    tasks = [(_awgn_task, (spec, L, t)) for L in spec.windows for t in spec.topologies]
    return _run_tasks(tasks, workers)


def run_imdd(spec: ExperimentSpec, workers: Optional[int] = None) -> RunResult:
    if spec.kind != "imdd":
        raise InvalidSpec(f"expected kind imdd, got {spec.kind}")
    spec.validate()
    return _run_tasks([(_imdd_task, (spec, snr)) for snr in spec.snr_points], workers)


RUNNERS = {
    "awgn-sweep-L": run_awgn_sweep_L,
    "awgn-sweep-snr": run_awgn_sweep_snr,
    "repeated-random": run_repeated_random,
    "imdd": run_imdd,
}


def run(spec: ExperimentSpec, workers: Optional[int] = None) -> RunResult:
    return RUNNERS[spec.kind](spec, workers)


def snr_grid(lo: float, hi: float, step: float) -> tuple[float, ...]:
    if step <= 0 or hi < lo:
        raise InvalidSpec("SNR grid needs step > 0 and max >= min")
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return tuple(round(lo + k * step, 10) for k in range(n))
