"""txn2vec: merchant embeddings from transaction co-occurrence pairs.

Pipeline: transactions CSV -> entity resolution -> time-windowed
co-occurrence pairs -> skip-gram negative-sampling embeddings ->
link-prediction / neighbor / direction / fraud-lift evaluation.
"""

from .sgns import KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
