"""Seeded micro tasks and training budgets.

Datasets are pure functions of the generator seed; the validation split is
disjoint from the training split by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

OBJECTIVES = ("cross_entropy", "mse")

OBJ_CROSS_ENTROPY = 0
OBJ_MSE = 1
OBJ_CODES = {"cross_entropy": OBJ_CROSS_ENTROPY, "mse": OBJ_MSE}


@dataclass(frozen=True)
class TrainBudget:
    """Update-step budget plus the data-fraction fidelity axis.

    ``sample_fraction`` truncates the shuffled training stream: a run at
    fraction f consumes at most round(f * n_train) samples, sub-epoch and
    non-repeating, so fewer optimizer steps execute at lower data fidelity.
    """

    steps: int
    batch_size: int
    sample_fraction: float = 1.0

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 < self.sample_fraction <= 1.0:
            raise ValueError("sample_fraction must be in (0, 1]")

    def effective_steps(self, n_train: int) -> int:
        n_stream = int(round(Fraction(self.sample_fraction) * n_train))
        return min(self.steps, n_stream // self.batch_size)


@dataclass
class Task:
    name: str
    generator_seed: int
    n_train: int
    n_val: int
    input_dim: int
    target_dim: int
    objective: str
    noise: float = 0.05
    _cache: tuple | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.n_train < 1 or self.n_val < 1:
            raise ValueError("split sizes must be positive")

    def data(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(X_train, y_train, X_val, y_val); generated once, then cached."""
        if self._cache is None:
            self._cache = _GENERATORS[self.name](self)
        return self._cache


def _split(rng: np.random.Generator, x: np.ndarray, y: np.ndarray,
           n_train: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    perm = rng.permutation(x.shape[0])
    x, y = x[perm], y[perm]
    return (
        np.ascontiguousarray(x[:n_train]),
        np.ascontiguousarray(y[:n_train]),
        np.ascontiguousarray(x[n_train:]),
        np.ascontiguousarray(y[n_train:]),
    )


def _make_spiral(task: Task):
    """Two interleaved spiral arms in the plane; class = arm."""
    if task.input_dim != 2 or task.target_dim != 2:
        raise ValueError("spiral task is 2-D with 2 classes")
    rng = np.random.Generator(np.random.PCG64(task.generator_seed))
    total = task.n_train + task.n_val
    per_class = (total + 1) // 2
    xs, ys = [], []
    for c in range(2):
        u = rng.uniform(0.0, 1.0, size=per_class)
        theta = 0.5 * np.pi + u * 3.0 * np.pi + c * np.pi
        r = 0.1 + 0.9 * u
        pts = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
        pts += rng.normal(0.0, task.noise, size=pts.shape)
        xs.append(pts)
        ys.append(np.full(per_class, c, dtype=np.int64))
    x = np.concatenate(xs)[:total]
    y = np.concatenate(ys)[:total]
    return _split(rng, x.astype(np.float64), y, task.n_train)


def _make_waves(task: Task):
    """Smooth regression target: sines of random projections of the input."""
    rng = np.random.Generator(np.random.PCG64(task.generator_seed))
    total = task.n_train + task.n_val
    x = rng.uniform(-1.0, 1.0, size=(total, task.input_dim))
    proj = rng.normal(0.0, 1.0, size=(task.input_dim, task.target_dim))
    y = np.sin(2.0 * x @ proj) + rng.normal(0.0, task.noise, size=(total, task.target_dim))
    return _split(rng, x, y, task.n_train)


_GENERATORS = {"spiral": _make_spiral, "waves": _make_waves}


def make_task(name: str, generator_seed: int, n_train: int, n_val: int,
              input_dim: int = 2, target_dim: int = 2,
              objective: str | None = None, noise: float = 0.05) -> Task:
    if name not in _GENERATORS:
        raise ValueError(f"unknown task {name!r}; have {sorted(_GENERATORS)}")
    if objective is None:
        objective = "cross_entropy" if name == "spiral" else "mse"
    return Task(name, generator_seed, n_train, n_val, input_dim, target_dim,
                objective, noise)
