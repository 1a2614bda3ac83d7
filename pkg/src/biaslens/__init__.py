"""biaslens: dataset-bias auditing for image classification.

Detects hidden background bias by (a) training a compact CNN on corner
crops of seemingly blank background and (b) comparing classification
accuracy on original versus transformed images (Fourier log-magnitude,
wavelet mosaics, median filter, and their compositions).
"""

__version__ = "0.1.0"
