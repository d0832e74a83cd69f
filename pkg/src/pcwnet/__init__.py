"""Pedestrian collision warning: a dual-branch CNN, a HoG baseline and the tools to compare them."""

import os

# PCW_THREADS caps BLAS threads. It has to be applied before numpy loads its
# BLAS library, so it lives here rather than in the CLI.
_threads = os.environ.get("PCW_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"
