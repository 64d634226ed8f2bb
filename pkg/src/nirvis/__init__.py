"""Cross-spectral (NIR to VIS) face matching toolkit.

Two independent stages sit around a black-box VIS feature extractor:
hallucinating a VIS image from the NIR probe before feature extraction, and a
learned low-rank linear embedding applied to the extracted features.
"""

__version__ = "0.1.0"
