"""Class-targeted GAN baselines for one-vs-one attributions, plus the
attribution methods and evaluation metrics built around them."""

__version__ = "0.1.0"
