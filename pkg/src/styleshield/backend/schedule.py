"""Forward-process noise schedule.

Implements the closed-form forward process

    z_t = sqrt(abar_t) * z_0 + sqrt(1 - abar_t) * eps

where abar_t is the cumulative product of (1 - beta_s) for s <= t.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import TimestepRangeError


@dataclass(frozen=True)
class NoiseSchedule:
    """Beta schedule plus its cumulative alpha products.

    Invariants (checked at construction):
        - every beta strictly inside (0, 1)
        - alphas_cumprod strictly decreasing
        - alphas_cumprod[t] equals prod(1 - beta_s) for s <= t within 1e-6
    """

    betas: np.ndarray
    alphas_cumprod: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size == 0:
            raise ValueError("betas must be a nonempty 1-D array")
        if np.any(betas <= 0) or np.any(betas >= 1):
            raise ValueError("every beta must lie strictly inside (0, 1)")
        object.__setattr__(self, "betas", betas)
        expected = np.cumprod(1.0 - betas)
        if self.alphas_cumprod is None:
            object.__setattr__(self, "alphas_cumprod", expected)
        else:
            abar = np.asarray(self.alphas_cumprod, dtype=np.float64)
            if abar.shape != betas.shape:
                raise ValueError("alphas_cumprod length must match betas")
            if np.max(np.abs(abar - expected)) > 1e-6:
                raise ValueError("alphas_cumprod inconsistent with betas")
            if np.any(np.diff(abar) >= 0):
                raise ValueError("alphas_cumprod must be strictly decreasing")
            object.__setattr__(self, "alphas_cumprod", abar)

    @classmethod
    def linear(cls, num_steps: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> "NoiseSchedule":
        """DDPM-style linear beta ramp."""
        return cls(betas=np.linspace(beta_start, beta_end, num_steps))

    @property
    def num_steps(self) -> int:
        return int(self.betas.size)

    def alpha_bar(self, t: int) -> float:
        self.check_timestep(t)
        return float(self.alphas_cumprod[t])

    def check_timestep(self, t: int) -> None:
        if not (0 <= int(t) < self.num_steps):
            raise TimestepRangeError(f"timestep {t} outside [0, {self.num_steps})")


def forward_process(z0, eps, alpha_bar: float):
    """Closed-form forward diffusion. Works for numpy arrays and torch tensors."""
    if not 0.0 <= alpha_bar <= 1.0:
        raise ValueError(f"alpha_bar must be in [0, 1], got {alpha_bar}")
    sqrt_ab = alpha_bar ** 0.5
    sqrt_one_minus = (1.0 - alpha_bar) ** 0.5
    return sqrt_ab * z0 + sqrt_one_minus * eps
