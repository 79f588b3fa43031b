"""Toolkit for turning boundary probability maps and semantic maps into
instance segmentation masks, with loss numerics and mAP evaluation."""

__version__ = "0.1.0"
