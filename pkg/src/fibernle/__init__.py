"""Coherent DP-16QAM fiber link simulator with classical DSP and a
Transformer nonlinear equalizer trained on bit-expanded symbol windows."""

__version__ = "0.1.0"
