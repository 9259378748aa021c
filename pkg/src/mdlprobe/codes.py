"""Baseline codelengths and the online (prequential) code.

The online code transmits labels in blocks along a fixed seeded shuffle of
the training set. The first block costs t1*log2(K) (uniform code); each
later block is scored by a probe freshly trained on everything transmitted
before it. The model cost of the code is the difference between the total
and the cross-entropy of a final probe trained on all n examples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from .datasets import Dataset, empirical_entropy_bits
from .errors import ConsistencyError, NumericalError
from .probe_train import TrainConfig, evaluate, train_probe
from .rng import SplitMix64, derive_seed

DEFAULT_FRACTIONS = (0.1, 0.2, 0.4, 0.8, 1.6, 3.2, 6.25, 12.5, 25.0, 50.0, 100.0)


@dataclass
class Schedule:
    fractions: tuple[float, ...]
    timesteps: tuple[int, ...]  # strictly increasing, last = n

    @property
    def num_steps(self) -> int:
        return len(self.timesteps)


def make_schedule(n: int, fractions=DEFAULT_FRACTIONS) -> Schedule:
    """Timesteps = round-half-up(n*f/100), clamped to >= 1, deduplicated.

    Rounding runs on exact rationals (fractions are parsed from their
    decimal representation) so schedules are platform-independent.
    """
    if n < 2:
        raise ValueError("online coding needs n >= 2")
    fracs = [float(f) for f in fractions]
    if not fracs:
        raise ValueError("fractions must be non-empty")
    if any(b <= a for a, b in zip(fracs, fracs[1:])):
        raise ValueError("fractions must be strictly ascending")
    if fracs[0] <= 0 or fracs[-1] != 100.0:
        raise ValueError("fractions must lie in (0, 100] and end at 100")
    steps = []
    for f in fracs:
        exact = Fraction(n) * Fraction(str(f)) / 100
        t = int(exact + Fraction(1, 2))  # floor(x + 1/2) = round-half-up
        steps.append(max(1, t))
    steps[-1] = n
    dedup = sorted(set(steps))
    return Schedule(tuple(fracs), tuple(dedup))


def uniform_codelength(n: int, K: int) -> float:
    """n * log2 K: the code available without any learning."""
    if n < 0 or K < 1:
        raise ValueError("need n >= 0 and K >= 1")
    return n * math.log2(K)


def prior_codelength(labels) -> float:
    """n * H(empirical label distribution): inputs ignored, priors only."""
    y = np.asarray(labels, dtype=np.int64)
    if len(y) == 0:
        raise ValueError("labels must be non-empty")
    K = int(y.max()) + 1
    return len(y) * empirical_entropy_bits(y, K)


def compression_ratio(baseline_bits: float, code_bits: float) -> float:
    if code_bits <= 0:
        raise ValueError("code_bits must be positive")
    return baseline_bits / code_bits


@dataclass
class CurvePoint:
    """Learning-curve entry for one timestep of the online code."""

    step_index: int
    t: int
    next_block_bits_per_target: float
    next_block_accuracy: float
    cumulative_bits: float
    test_bits_per_target: float | None = None
    test_accuracy: float | None = None


@dataclass
class OnlineReport:
    total_bits: float
    first_block_bits: float
    per_block_bits: list[float]
    curve: list[CurvePoint]
    final_ce_bits: float
    data_bits: float
    model_bits: float
    seed: int
    schedule: Schedule
    n: int
    num_classes: int
    final_train_accuracy: float
    final_test_accuracy: float | None = None
    final_test_bits_per_target: float | None = None
    sub_epochs: list[int] = field(default_factory=list)


def online_code(
    train: Dataset,
    config: TrainConfig,
    schedule: Schedule,
    dev: Dataset | None = None,
    test: Dataset | None = None,
) -> OnlineReport:
    """Prequential codelength of `train`'s labels given its features.

    Transmission order is one seeded shuffle fixed before coding. Each
    timestep trains a fresh probe (derived seed) on the prefix transmitted
    so far, using the same annealing/early-stopping protocol as a standard
    probe (`dev`, when given, plays its usual role in every sub-training).
    The model trained at the last timestep sees all n examples and supplies
    the final cross-entropy used for the data/model decomposition.
    """
    n = train.n
    if schedule.timesteps[-1] != n:
        raise ConsistencyError(f"schedule ends at {schedule.timesteps[-1]}, train has {n}")
    K = train.K
    order = SplitMix64(derive_seed(config.seed, 0)).permutation(n)
    ordered = train.subset(order)

    t1 = schedule.timesteps[0]
    first_block_bits = t1 * math.log2(K)
    per_block_bits: list[float] = []
    curve: list[CurvePoint] = []
    sub_epochs: list[int] = []
    cumulative = first_block_bits
    final_probe = None

    steps = schedule.timesteps
    for i, t in enumerate(steps, start=1):
        step_config = replace(config, seed=derive_seed(config.seed, i))
        prefix = ordered.subset(np.arange(t))
        try:
            probe = train_probe(prefix, dev, step_config)
        except NumericalError as e:
            raise NumericalError(f"online sub-training at step {i} (t={t}) failed: {e}") from e
        sub_epochs.append(probe.epochs_run)
        if i < len(steps):
            block = ordered.subset(np.arange(t, steps[i]))
            res = evaluate(probe, block)
            per_block_bits.append(res.total_bits)
            cumulative += res.total_bits
            point = CurvePoint(
                step_index=i,
                t=t,
                next_block_bits_per_target=res.bits_per_target,
                next_block_accuracy=res.accuracy,
                cumulative_bits=cumulative,
            )
            if test is not None and test.n:
                tr = evaluate(probe, test)
                point.test_bits_per_target = tr.bits_per_target
                point.test_accuracy = tr.accuracy
            curve.append(point)
        else:
            final_probe = probe

    total_bits = first_block_bits + float(sum(per_block_bits))
    check = first_block_bits + math.fsum(per_block_bits)
    if abs(total_bits - check) > 1e-9 * max(1.0, abs(check)):
        raise NumericalError("online accounting identity violated")

    final_train = evaluate(final_probe, ordered)
    final_ce_bits = final_train.total_bits
    report = OnlineReport(
        total_bits=total_bits,
        first_block_bits=first_block_bits,
        per_block_bits=per_block_bits,
        curve=curve,
        final_ce_bits=final_ce_bits,
        data_bits=final_ce_bits,
        model_bits=total_bits - final_ce_bits,
        seed=config.seed,
        schedule=schedule,
        n=n,
        num_classes=K,
        final_train_accuracy=final_train.accuracy,
        sub_epochs=sub_epochs,
    )
    if test is not None and test.n:
        tr = evaluate(final_probe, test)
        report.final_test_accuracy = tr.accuracy
        report.final_test_bits_per_target = tr.bits_per_target
    return report


def decompose_online(report: OnlineReport) -> tuple[float, float]:
    """(data_bits, model_bits): final-model cross-entropy and the rest.

    model_bits can come out negative for a badly tuned final model; it is
    reported as-is.
    """
    data_bits = report.final_ce_bits
    return data_bits, report.total_bits - data_bits
