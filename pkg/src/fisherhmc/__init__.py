"""Fisher-divergence mass-matrix adaptation for NUTS.

The sampler lives in :mod:`fisherhmc.adapt` (``warmup_and_sample``), the
covariance estimators in :mod:`fisherhmc.estimators` and the diagnostics in
:mod:`fisherhmc.diagnostics`.
"""

__version__ = "0.1.0"
