"""Learned inertial odometry for cycling: MoE velocity network + error-state EKF."""
__version__ = "0.1.0"
