"""Interference-aware control of RIS-assisted uplinks.

Modules: ``geometry`` (placement and channels), ``waveform`` (synthetic I/Q
data), ``cnn`` (activity classifier), ``control`` (SINR, phase and ON-OFF
optimization), ``experiments`` (sweeps and benchmarks), ``cli``.
"""

__version__ = "0.1.0"
