"""Variance-preserving diffusion schedule shared with the guidance service.

alpha_t = sqrt(abar(t)) with log abar(t) = N * integral_0^t log(1 - beta(u)) du
for a linear beta ramp; this is the continuum limit of the discrete product
schedule, and satisfies alpha_0 = 1, sigma_0 = 0 exactly.  w(t) = sigma_t^2.
A hash of the constants is advertised by the guidance service; clients refuse
to train against a service whose hash differs.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

BETA_START = 8.5e-4
BETA_END = 1.2e-2
NUM_TRAIN_STEPS = 1000
WEIGHT_FORM = "sigma_sq"


def _log_abar(t):
    t = np.asarray(t, dtype=np.float64)
    a = 1.0 - BETA_START
    b = BETA_END - BETA_START
    upper = a - b * t
    integral = (a * (np.log(a) - 1.0) - upper * (np.log(upper) - 1.0)) / b
    return NUM_TRAIN_STEPS * integral


@dataclass(frozen=True)
class DiffusionSchedule:
    beta_start: float = BETA_START
    beta_end: float = BETA_END
    num_train_steps: int = NUM_TRAIN_STEPS

    def alpha(self, t):
        return np.sqrt(np.exp(_log_abar(t)))

    def sigma(self, t):
        return np.sqrt(1.0 - np.exp(_log_abar(t)))

    def weight(self, t):
        return 1.0 - np.exp(_log_abar(t))  # sigma_t^2

    def describe(self) -> str:
        return (f"vp-linear|beta_start={self.beta_start:.6e}|beta_end={self.beta_end:.6e}"
                f"|steps={self.num_train_steps}|w={WEIGHT_FORM}|abar=exact-log-integral")

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.describe().encode("ascii")).hexdigest()


DEFAULT_SCHEDULE = DiffusionSchedule()
SCHEDULE_HASH = DEFAULT_SCHEDULE.hash
