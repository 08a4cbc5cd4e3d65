"""MIMO self-attentive RNN beamforming toolkit."""

__version__ = "0.1.0"
