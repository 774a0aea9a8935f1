"""Trajectory-diversity initial selection and loss-driven active selection of odometry training sequences."""

__version__ = "0.1.0"
