"""Temporally coherent disparity estimation for rectified stereo video."""

__version__ = "0.1.0"
