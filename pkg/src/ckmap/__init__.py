"""Channel knowledge maps: site-specific channel gain and path maps built from
sampled propagation data, with D2D sub-band assignment and mmWave beam
selection built on top."""

__version__ = "0.1.0"
FORMAT_VERSION = 1
