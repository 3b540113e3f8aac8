"""Linguistic steganalysis with pre-trained LSTM initialisation.

LSTM language model and sequence autoencoder trained from scratch in numpy,
Bins / FLC / VLC generative stego codecs, a carrier-vs-stego classifier that
can start from either pre-trained network, and a deterministic experiment
harness.
"""

__version__ = "0.1.0"
