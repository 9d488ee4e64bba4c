"""Automatic + interactive point-prompt image segmentation, desk scale.

A small multi-class segmenter that learns where to place its own point
prompts, decodes masks from them, and accepts user point/box corrections at
inference time — all on a self-contained float64 autodiff core.
"""

__version__ = "0.1.0"
