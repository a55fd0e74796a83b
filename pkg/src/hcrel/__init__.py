"""Human-centric visual relationship benchmark: ingestion, splits, webly
supervised metric learning, retrieval, and Recall@K evaluation.
"""

import os

# Pin BLAS pools before numpy first loads so repeated runs reduce in the
# same order.  App-level parallelism is controlled by the --threads flag.
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

__version__ = "0.1.0"
