"""Job/result structures exchanged between the engine and a step backend.

A backend executes the fused train loop for a stack of dense layers given in
canonical form (every entry is affine + activation). The same job description
drives the pure-numpy path and the compiled kernel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

OPT_SGD = 0
OPT_SGD_MOMENTUM = 1
OPT_ADAM = 2
OPT_CODES = {"sgd": OPT_SGD, "sgd_momentum": OPT_SGD_MOMENTUM, "adam": OPT_ADAM}
# optimizer state scalars per trainable parameter
OPT_STATE_SCALARS = {"sgd": 0, "sgd_momentum": 1, "adam": 2}

ADAM_EPS = 1e-8


@dataclass
class StepJob:
    # canonical layer stack: parallel arrays over parametric layers
    d_in: np.ndarray          # int64[n]
    d_out: np.ndarray         # int64[n]
    act: np.ndarray           # int64[n], codes from network.ACT_CODES
    weights: list[np.ndarray]  # float64 (d_in, d_out), mutated in place
    biases: list[np.ndarray]   # float64 (d_out,), mutated in place
    first_trainable: int      # layers [first_trainable, n) receive updates

    x: np.ndarray             # float64 (N, d_in[0])
    y: np.ndarray             # int64 (N,) for cross-entropy, float64 (N, d) for mse
    order: np.ndarray         # int64 sample indices, consumed front to back
    batch_size: int
    steps: int                # 0 means evaluate only
    objective: int            # OBJ_* code

    opt: int = OPT_SGD
    lr_schedule: np.ndarray = field(default_factory=lambda: np.zeros(0))
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999

    val_x: np.ndarray | None = None
    val_y: np.ndarray | None = None
    collect_grads: bool = False

    @property
    def n_layers(self) -> int:
        return len(self.weights)


@dataclass
class RunResult:
    steps_done: int
    diverged: bool
    flops: int                # instrumented multiply-add counter x2
    objective: float | None   # validation objective, None if no val set given
    last_train_loss: float
    grads: tuple[list[np.ndarray], list[np.ndarray]] | None = None
    opt_state_scalars: int = 0  # scalars actually allocated for optimizer state
