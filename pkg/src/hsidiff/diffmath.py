"""Closed-form DDPM mathematics over a fixed variance schedule.

Timesteps are 1-based: index ``t`` refers to ``beta[t - 1]``. ``t = 0`` is
reserved for the clean input and is never looked up in a schedule.

All stochastic operations take their noise as an argument; nothing here
draws random numbers except :func:`sample`, which takes an explicit seed.
They accept numpy arrays or torch tensors alike.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SCHEDULE_KINDS = ("linear",)


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class VarianceSchedule:
    T: int
    beta_start: float
    beta_end: float
    kind: str
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma2: np.ndarray

    def params(self) -> dict:
        return {"T": self.T, "beta_start": self.beta_start, "beta_end": self.beta_end, "kind": self.kind}

    def check_t(self, t: int) -> int:
        t = int(t)
        if not 1 <= t <= self.T:
            raise ScheduleError(f"timestep {t} outside [1, {self.T}]")
        return t

    def snr(self) -> np.ndarray:
        return self.alpha_bar / (1.0 - self.alpha_bar)


def build_schedule(T: int = 500, beta_start: float = 1e-4, beta_end: float = 0.02, kind: str = "linear") -> VarianceSchedule:
    if kind not in SCHEDULE_KINDS:
        raise ScheduleError(f"unknown schedule kind {kind!r}; supported: {SCHEDULE_KINDS}")
    if int(T) < 1:
        raise ScheduleError(f"T must be >= 1, got {T}")
    for name, v in (("beta_start", beta_start), ("beta_end", beta_end)):
        if not 0.0 < v < 1.0:
            raise ScheduleError(f"{name}={v} outside (0, 1)")
    if beta_start > beta_end:
        raise ScheduleError(f"beta_start={beta_start} > beta_end={beta_end}")
    T = int(T)
    steps = np.arange(T, dtype=np.float64)
    beta = beta_start + steps * (beta_end - beta_start) / max(T - 1, 1)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    for a in (beta, alpha, alpha_bar):
        a.setflags(write=False)
    return VarianceSchedule(T, float(beta_start), float(beta_end), kind, beta, alpha, alpha_bar, beta.copy())


def schedule_from_params(params: dict) -> VarianceSchedule:
    return build_schedule(int(params["T"]), float(params["beta_start"]), float(params["beta_end"]), params.get("kind", "linear"))


def _sqrt(x):
    return x ** 0.5


def forward_step(s: VarianceSchedule, x_prev, t: int, eps):
    """One transition of the Markov chain, x_{t-1} -> x_t, with given noise."""
    b = s.beta[s.check_t(t) - 1]
    return math.sqrt(1.0 - b) * x_prev + math.sqrt(b) * eps


def forward_noise(s: VarianceSchedule, x0, t, eps):
    """Jump straight from x_0 to x_t.

    ``t`` may be an int or an integer array/tensor with one entry per leading
    batch element.
    """
    ab = _gather(s.alpha_bar, s, t, x0)
    return _sqrt(ab) * x0 + _sqrt(1.0 - ab) * eps


def recover_x0(s: VarianceSchedule, x_t, t, eps):
    ab = _gather(s.alpha_bar, s, t, x_t)
    return (x_t - _sqrt(1.0 - ab) * eps) / _sqrt(ab)


def posterior_mean(s: VarianceSchedule, x_t, t: int, eps_pred):
    t = s.check_t(t)
    a, ab = s.alpha[t - 1], s.alpha_bar[t - 1]
    return (x_t - ((1.0 - a) / math.sqrt(1.0 - ab)) * eps_pred) / math.sqrt(a)


def reverse_step(s: VarianceSchedule, x_t, t: int, eps_pred, z):
    t = s.check_t(t)
    return posterior_mean(s, x_t, t, eps_pred) + math.sqrt(s.sigma2[t - 1]) * z


def diffusion_loss(eps_true, eps_pred):
    if tuple(eps_true.shape) != tuple(eps_pred.shape):
        raise ValueError(f"shape mismatch: {tuple(eps_true.shape)} vs {tuple(eps_pred.shape)}")
    d = eps_pred - eps_true
    return (d * d).mean()


def equal_interval_timesteps(m: int, T: int) -> list[int]:
    """``m`` timesteps spread at equal spacing over [1, T]."""
    if m < 1:
        raise ValueError("m must be >= 1")
    if m == 1:
        return [1]
    step = (T - 1) // (m - 1)
    if step < 1:
        raise ValueError(f"cannot place {m} distinct timesteps in [1, {T}]")
    return [1 + i * step for i in range(m)]


def _gather(table: np.ndarray, s: VarianceSchedule, t, like):
    if np.ndim(t) == 0 and not _is_tensor(t):
        return float(table[s.check_t(t) - 1])
    if _is_tensor(like):
        import torch

        tt = t if _is_tensor(t) else torch.as_tensor(np.asarray(t))
        if tt.numel() and (int(tt.min()) < 1 or int(tt.max()) > s.T):
            raise ScheduleError(f"timesteps outside [1, {s.T}]")
        vals = torch.tensor(table, dtype=like.dtype, device=like.device)[tt.long() - 1]
        return vals.reshape(-1, *([1] * (like.dim() - 1)))
    t = np.asarray(t, dtype=np.int64)
    if t.size and (t.min() < 1 or t.max() > s.T):
        raise ScheduleError(f"timesteps outside [1, {s.T}]")
    return table[t - 1].reshape(-1, *([1] * (np.ndim(like) - 1)))


def _is_tensor(x) -> bool:
    return type(x).__module__.startswith("torch")


def sample(model_fn, s: VarianceSchedule, shape, seed: int) -> np.ndarray:
    """Ancestral sampling x_T -> x_0 with ``model_fn(x_t, t) -> eps_pred``.

    Noise is drawn from a generator seeded with ``seed``; no noise is added at
    the final step.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape)
    for t in range(s.T, 0, -1):
        z = rng.standard_normal(shape) if t > 1 else np.zeros(shape)
        x = reverse_step(s, x, t, model_fn(x, t), z)
    return x
