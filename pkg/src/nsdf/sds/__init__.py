from .guidance import (
    MODE_COLOR,
    MODE_MULTIVIEW,
    MODE_SINGLE,
    GuidanceContext,
    apply_guidance,
    cfg_combine,
    compose_grid,
    frozen_sds_gradient,
    multiview_prompt,
    noisy_latent,
    resize_image,
    sample_timestep,
    sds_gradient,
)
from .noise import FrozenNoise, gaussian_noise, noise_image, philox4x32
from .oracle import OracleUnavailable, RemoteGuidanceOracle, ToyGaussianOracle
from .schedule import DEFAULT_SCHEDULE, SCHEDULE_HASH, DiffusionSchedule

__all__ = [
    "MODE_COLOR", "MODE_MULTIVIEW", "MODE_SINGLE",
    "GuidanceContext", "apply_guidance", "cfg_combine", "compose_grid",
    "frozen_sds_gradient", "multiview_prompt", "noisy_latent", "resize_image",
    "sample_timestep", "sds_gradient",
    "FrozenNoise", "gaussian_noise", "noise_image", "philox4x32",
    "OracleUnavailable", "RemoteGuidanceOracle", "ToyGaussianOracle",
    "DEFAULT_SCHEDULE", "SCHEDULE_HASH", "DiffusionSchedule",
]
