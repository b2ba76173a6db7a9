"""Optimizers compared in the saddle-escape study: momentum SGD, sharpness-aware
steps (normalized or unnormalized neighborhood), Gaussian-perturbed gradient
descent, and Monte-Carlo loss smoothing, plus learning-rate and neighborhood
schedules.

Step functions take a gradient callable ``grad_fn(w) -> (loss, grad)`` bound to
one mini-batch, mutate the optimizer state's momentum buffer, and return the
new parameter vector plus a per-step info dict. With their perturbations
switched off (rho / sigma / radius = 0) every optimizer takes the exact code
path of plain SGD, so trajectories degenerate bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ParameterError
from .linalg import SeededRng

SGD = "sgd"
SAM = "sam"
PGD = "pgd"
LPFSGD = "lpfsgd"
OPTIMIZER_KINDS = (SGD, SAM, PGD, LPFSGD)


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = SGD
    momentum: float = 0.9
    rho: float = 0.0
    rho_drw: float | None = None  # defaults to rho; must be >= rho when set
    sam_normalized: bool = True
    pgd_sigma: float = 1e-4
    lpf_mc_iters: int = 8
    lpf_radius: float = 1e-3

    def __post_init__(self):
        if self.kind not in OPTIMIZER_KINDS:
            raise ParameterError(f"unknown optimizer kind {self.kind!r}")
        if not 0.0 <= self.momentum < 1.0:
            raise ParameterError("momentum must be in [0, 1)")
        if self.rho < 0 or self.pgd_sigma < 0 or self.lpf_radius < 0:
            raise ParameterError("rho, pgd_sigma, lpf_radius must be >= 0")
        if self.rho_drw is not None and self.rho_drw < self.rho:
            raise ParameterError("rho_drw must be >= rho")
        if self.lpf_mc_iters < 1:
            raise ParameterError("lpf_mc_iters must be >= 1")

    @property
    def effective_rho_drw(self) -> float:
        return self.rho if self.rho_drw is None else self.rho_drw


@dataclass(frozen=True)
class LrSchedule:
    base_lr: float
    warmup_epochs: int = 0
    milestones: tuple = ()  # ((epoch, multiplier), ...)

    def __post_init__(self):
        if self.base_lr < 0:
            raise ParameterError("base_lr must be >= 0")
        if self.warmup_epochs < 0:
            raise ParameterError("warmup_epochs must be >= 0")
        epochs = [e for e, _ in self.milestones]
        if any(m <= 0 for _, m in self.milestones):
            raise ParameterError("milestone multipliers must be positive")
        if epochs != sorted(set(epochs)):
            raise ParameterError("milestone epochs must be strictly increasing")


@dataclass(frozen=True)
class RhoSchedule:
    steps: tuple = ()  # ((start_epoch, rho_value), ...)

    def __post_init__(self):
        starts = [e for e, _ in self.steps]
        if any(v < 0 for _, v in self.steps):
            raise ParameterError("rho values must be >= 0")
        if starts != sorted(set(starts)):
            raise ParameterError("step start epochs must be strictly increasing")


@dataclass
class OptimizerState:
    velocity: np.ndarray
    rng: SeededRng
    step_count: int = 0

    @classmethod
    def fresh(cls, dim: int, rng: SeededRng) -> "OptimizerState":
        return cls(velocity=np.zeros(dim), rng=rng)


def _momentum_update(w, grad, state: OptimizerState, lr: float, momentum: float):
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient in optimizer step")
    state.velocity = momentum * state.velocity + grad
    state.step_count += 1
    return w - lr * state.velocity


def sgd_step(w, grad, state: OptimizerState, lr: float, momentum: float = 0.9):
    """velocity <- momentum*velocity + grad; w <- w - lr*velocity."""
    return _momentum_update(w, grad, state, lr, momentum)


def sam_step(grad_fn, w, state: OptimizerState, lr: float, rho: float,
             momentum: float = 0.9, normalized: bool = True):
    """Gradient at the (first-order) sharpest point in a rho-ball.

    normalized: eps = rho * g / ||g||  (the practical algorithm)
    unnormalized: eps = rho * g        (the form the amplification theory uses)
    A zero first gradient in normalized mode skips the perturbation and is
    flagged in the info dict.
    """
    if rho < 0:
        raise ParameterError("rho must be >= 0")
    loss1, g1 = grad_fn(w)
    g1_norm = float(np.linalg.norm(g1))
    info = {"loss": loss1, "grad_norm": g1_norm, "eps_skipped": False}
    if rho == 0.0 or (normalized and g1_norm == 0.0):
        # evaluate at w itself so the trajectory is bitwise the SGD one
        info["eps_skipped"] = rho != 0.0
        _, g2 = grad_fn(w)
    else:
        eps = (rho / g1_norm) * g1 if normalized else rho * g1
        _, g2 = grad_fn(w + eps)
    return _momentum_update(w, g2, state, lr, momentum), info


def pgd_step(grad_fn, w, state: OptimizerState, lr: float, sigma: float,
             momentum: float = 0.9):
    """Gradient at a Gaussian-perturbed iterate w + xi, xi ~ N(0, sigma^2 I)."""
    if sigma < 0:
        raise ParameterError("sigma must be >= 0")
    if sigma == 0.0:
        loss, g = grad_fn(w)
    else:
        xi = state.rng.normal(size=w.shape[0], std=sigma)
        loss, g = grad_fn(w + xi)
    info = {"loss": loss, "grad_norm": float(np.linalg.norm(g))}
    return _momentum_update(w, g, state, lr, momentum), info


def lpf_sgd_step(grad_fn, w, state: OptimizerState, lr: float, mc_iters: int,
                 radius: float, blocks, momentum: float = 0.9):
    """Monte-Carlo smoothed gradient: average of mc_iters gradients at
    block-wise Gaussian perturbations with std = radius*||w_block||/sqrt(size).

    blocks is a sequence of (offset, size) covering the parameter vector (for
    an MLP, the per-layer weight and bias blocks).
    """
    if mc_iters < 1:
        raise ParameterError("mc_iters must be >= 1")
    if radius < 0:
        raise ParameterError("radius must be >= 0")
    if radius == 0.0:
        loss, g = grad_fn(w)
        info = {"loss": loss, "grad_norm": float(np.linalg.norm(g))}
        return _momentum_update(w, g, state, lr, momentum), info

    stds = np.empty(w.shape[0])
    for offset, size in blocks:
        block = w[offset : offset + size]
        stds[offset : offset + size] = radius * np.linalg.norm(block) / np.sqrt(size)
    g_sum = np.zeros_like(w)
    loss_sum = 0.0
    for _ in range(mc_iters):
        xi = state.rng.normal(size=w.shape[0]) * stds
        loss_m, g_m = grad_fn(w + xi)
        g_sum += g_m
        loss_sum += loss_m
    g = g_sum / mc_iters
    info = {"loss": loss_sum / mc_iters, "grad_norm": float(np.linalg.norm(g))}
    return _momentum_update(w, g, state, lr, momentum), info


def lr_at(schedule: LrSchedule, epoch: int, step_in_epoch: int = 0,
          steps_per_epoch: int = 1) -> float:
    """Linear warmup to base_lr, then base_lr times the product of all
    milestone multipliers whose epoch has been reached."""
    if epoch < 0:
        raise ParameterError("epoch must be >= 0")
    if epoch < schedule.warmup_epochs:
        done = epoch * steps_per_epoch + step_in_epoch + 1
        return schedule.base_lr * done / (schedule.warmup_epochs * steps_per_epoch)
    lr = schedule.base_lr
    for milestone_epoch, mult in schedule.milestones:
        if epoch >= milestone_epoch:
            lr *= mult
    return lr


def rho_at(schedule: RhoSchedule, epoch: int) -> float:
    """Value of the last schedule step whose start epoch has been reached;
    0 before the first step."""
    if epoch < 0:
        raise ParameterError("epoch must be >= 0")
    value = 0.0
    for start, rho in schedule.steps:
        if epoch >= start:
            value = rho
    return value
