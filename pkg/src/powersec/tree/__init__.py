"""Axis-aligned binary decision trees (CART / C4.5-style / extremely randomized).

The split scan runs in a compiled kernel when available; set the environment
variable ``POWERSEC_PURE_PYTHON=1`` to force the numpy implementation.
"""
import os

if os.environ.get("POWERSEC_PURE_PYTHON"):
    from ._splitter_py import level_split
    BACKEND = "python"
else:
    try:
        from ._splitter import level_split
        BACKEND = "cython"
    except ImportError:  # extension not built
        from ._splitter_py import level_split
        BACKEND = "python"

from .core import (  # noqa: E402
    CRITERIA,
    PreparedData,
    Tree,
    TreeParams,
    best_split,
    gini_impurity,
    grow_tree,
    predict_tree,
)

__all__ = ["BACKEND", "CRITERIA", "PreparedData", "Tree", "TreeParams", "best_split",
           "gini_impurity", "grow_tree", "level_split", "predict_tree"]
