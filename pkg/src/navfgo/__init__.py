"""INS-centric GNSS-visual-inertial sliding-window estimator."""

__version__ = "0.1.0"
