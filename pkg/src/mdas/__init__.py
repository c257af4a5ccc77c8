"""Masked-diffusion sequence decoding toolkit.

Audio-conditioned training of a bidirectional mask predictor, parallel and
semi-autoregressive denoising decoders, deliberation-based refinement of
first-pass transcripts, and a WER/RTF benchmark harness over a synthetic
speech-like task.
"""

__version__ = "0.1.0"
