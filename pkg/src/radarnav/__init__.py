"""Radar-inertial odometry toolkit.

Robust non-iterative scan-to-scan registration with uncertainty output,
fused with IMU propagation through an error-state Kalman filter.
"""

__version__ = "0.1.0"
