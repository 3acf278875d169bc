"""glmpath - elastic-net regularization paths for GLMs, Cox models and the relaxed lasso."""

__version__ = "0.1.0"
