"""Hot-loop kernels with a compiled core and a pure-numpy fallback.

The Cython extension `_native` is built at install time when a compiler is
available; otherwise (or when RISKRANK_PURE=1 is set) the numpy fallback in
`_purepy` is used. Both implementations are comparison-identical: they use
the same total order on (similarity, id-rank), so results are bit-equal.
"""

from __future__ import annotations

import importlib
import os

from . import _purepy

_native = None
if os.environ.get("RISKRANK_PURE", "") != "1":
    try:
        _native = importlib.import_module(__name__ + "._native")
    except ImportError:
        _native = None

BACKEND = "native" if _native is not None else "purepy"
_impl = _native if _native is not None else _purepy


def knn_class_counts(sims, labels, order_rank, exclude, k, num_classes):
    """Per query row, count labels among its k most-similar train rows.

    sims: (n_query, n_train) cosine similarities; labels: (n_train,) class
    indices; order_rank: (n_train,) deterministic tie-break rank (lexicographic
    id order); exclude: (n_query,) train-row index to skip (-1 for none).
    """
    import numpy as np

    sims = np.ascontiguousarray(sims, dtype=np.float64)
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    order_rank = np.ascontiguousarray(order_rank, dtype=np.int64)
    exclude = np.ascontiguousarray(exclude, dtype=np.int64)
    n_train = sims.shape[1]
    avail = n_train - int((exclude >= 0).any())
    if k > avail:
        raise ValueError("k=%d exceeds available neighbors (%d)" % (k, avail))
    return _impl.knn_class_counts(sims, labels, order_rank, exclude, k, num_classes)


def vote_wins(gamma):
    """Per instance, count strict pairwise per-class risk-score wins."""
    import numpy as np

    gamma = np.ascontiguousarray(gamma, dtype=np.float64)
    return _impl.vote_wins(gamma)
