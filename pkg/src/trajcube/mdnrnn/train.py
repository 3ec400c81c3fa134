"""Minibatch training with Nesterov momentum, global-norm clipping and step decay."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .network import FlightSample, ModelConfig, Params, init_params, loss_and_grads

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 0.001
    decay_every: int = 1000
    decay_factor: float = 0.5
    batch_size: int = 256
    momentum: float = 0.9
    clip_norm: float = 5.0
    epochs: int = 100
    # std of Gaussian noise added to the consumed (normalized) states, per state column
    input_noise: tuple = (0.0, 0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.lr0 <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("invalid training configuration")
        if not 0 < self.decay_factor <= 1 or self.decay_every < 1:
            raise ValueError("decay_factor must be in (0, 1] and decay_every >= 1")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        object.__setattr__(self, "input_noise", tuple(float(v) for v in self.input_noise))
        if len(self.input_noise) != 5 or min(self.input_noise) < 0:
            raise ValueError("input_noise needs 5 non-negative entries")

    def to_json(self) -> dict:
        return asdict(self)


def learning_rate(epoch: int, cfg: TrainConfig) -> float:
    """Rate used during (0-based) ``epoch``: one decay per completed ``decay_every`` epochs."""
    return cfg.lr0 * cfg.decay_factor ** (epoch // cfg.decay_every)


def clip_by_global_norm(grads: Dict[str, np.ndarray], max_norm: float):
    norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


class NesterovMomentum:
    def __init__(self, params: Params, momentum: float):
        self.momentum = momentum
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: Params, grads: Dict[str, np.ndarray], lr: float) -> None:
        mu = self.momentum
        for k in params:
            v = self.velocity[k]
            v *= mu
            v += grads[k]
            params[k] -= lr * (grads[k] + mu * v)


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    loss: float
    loss_per_step: float
    grad_norm: float


def train(samples: Sequence[FlightSample], model_cfg: ModelConfig, train_cfg: TrainConfig, seed: int = 0,
          params: Optional[Params] = None,
          callback: Optional[Callable[[EpochRecord], None]] = None):
    """Fit the network; deterministic for a given seed.

    The update direction is the gradient of the mean per-step NLL of each
    minibatch.  Returns ``(params, history)``.
    """
    if not samples:
        raise ValueError("training set is empty")
    params = init_params(model_cfg, seed) if params is None else {k: v.copy() for k, v in params.items()}
    opt = NesterovMomentum(params, train_cfg.momentum)
    rng = np.random.default_rng(seed)
    noise_rng = np.random.default_rng([seed, 1])
    noise_std = np.asarray(train_cfg.input_noise)
    history: List[EpochRecord] = []
    n = len(samples)
    for epoch in range(train_cfg.epochs):
        lr = learning_rate(epoch, train_cfg)
        perm = rng.permutation(n)
        total_loss = 0.0
        total_steps = 0
        norms = []
        for lo in range(0, n, train_cfg.batch_size):
            batch = [samples[i] for i in perm[lo:lo + train_cfg.batch_size]]
            noise = None
            if noise_std.any():
                noise = [noise_rng.normal(size=s.states.shape) * noise_std for s in batch]
            loss, grads, steps = loss_and_grads(batch, params, model_cfg, input_noise=noise)
            if not math.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch} (lr={lr:g}); "
                                       "lower the learning rate or the clipping threshold")
            if steps == 0:
                continue
            grads = {k: g / steps for k, g in grads.items()}
            grads, norm = clip_by_global_norm(grads, train_cfg.clip_norm)
            if not math.isfinite(norm):
                raise TrainingDiverged(f"non-finite gradient norm at epoch {epoch}")
            opt.step(params, grads, lr)
            total_loss += loss
            total_steps += steps
            norms.append(norm)
        rec = EpochRecord(epoch, lr, total_loss, total_loss / max(total_steps, 1),
                          float(np.mean(norms)) if norms else 0.0)
        history.append(rec)
        if callback is not None:
            callback(rec)
        log.debug("epoch %d lr %.3g loss/step %.4f |g| %.3f", epoch, lr, rec.loss_per_step, rec.grad_norm)
    return params, history


def evaluate_loss(samples: Sequence[FlightSample], params: Params, model_cfg: ModelConfig,
                  batch_size: int = 256):
    """Summed NLL and number of scored steps over a dataset."""
    total, steps = 0.0, 0
    for lo in range(0, len(samples), batch_size):
        loss, _, n = loss_and_grads(samples[lo:lo + batch_size], params, model_cfg)
        total += loss
        steps += n
    return total, steps
