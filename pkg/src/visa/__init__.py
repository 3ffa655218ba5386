"""Two-stream multispectral crop/weed segmentation with a numpy autodiff core."""

__version__ = "0.1.0"
