"""CSFNet: cosine-similarity fusion network for real-time RGB-X segmentation."""

__version__ = "0.1.0"
