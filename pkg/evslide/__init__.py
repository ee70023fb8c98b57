"""evslide - incremental graph convolution over sliding event-camera windows."""

__version__ = "0.1.0"
__author__ = "evslide contributors"
__description__ = "Event-wise graph convolution with exact slide/batch equivalence"
