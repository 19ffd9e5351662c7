"""Dynamic graph-attention classification of ROI time series.

Windowed Pearson connectivity graphs are encoded per window by graph-attention
layers, aggregated over time with a convolution and temporal attention, and
classified; evaluation uses stratified cross-validation with seed ensembles.
"""

__version__ = "0.1.0"
