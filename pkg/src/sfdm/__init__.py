"""Statistical-feature-guided diffusion for wearable HAR data augmentation."""

__version__ = "0.1.0"
