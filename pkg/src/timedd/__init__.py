"""Time domain decomposition solvers for forward-backward parabolic
optimal control systems: leapfrog/BDF2 space-time assembly, one- and
two-level Schwarz iterations in time, and the Krylov kernels they need."""

__version__ = "0.1.0"
