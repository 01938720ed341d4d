"""Hot loops: lasso coordinate descent and Minkowski k-nearest neighbours.

The compiled extension is used when it was built; otherwise the numpy
versions are.  Set ``CIPS_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _pykernels as python

compiled = None
if os.environ.get("CIPS_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as compiled
    except ImportError:  # extension not built
        compiled = None

_impl = compiled if compiled is not None else python
BACKEND = "cython" if compiled is not None else "python"
lasso_cd = _impl.lasso_cd
knn_predict = _impl.knn_predict

__all__ = ["BACKEND", "compiled", "knn_predict", "lasso_cd", "python"]
