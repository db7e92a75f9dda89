"""QA-conditioned attentional text-to-image GAN with a VQA critic."""

from .config import Config, VariantSpec, resolve_config

__version__ = "0.1.0"
__all__ = ["Config", "VariantSpec", "resolve_config", "__version__"]
