"""nsdf: neural signed-distance surface reconstruction with diffusion-guided
completion of the unobserved side, plus the full geometric evaluation stack."""

__version__ = "0.1.0"
