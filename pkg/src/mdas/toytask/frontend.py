"""Acoustic frontend analog: windowed mean pooling plus a trainable projection.

The projection matrix lives inside the model params ("audio_proj") and is
trained end-to-end; this module only owns the fixed pooling arithmetic.
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractError


def pool_frames(frames: np.ndarray, window: int) -> np.ndarray:
    """Mean over consecutive windows; ceil(num_frames / window) rows out.

    The final window may be shorter and is averaged over its actual size.
    """
    if window < 1:
        raise ContractError("window must be >= 1")
    if frames.ndim != 2 or frames.shape[0] == 0:
        raise ContractError("frames must be a nonempty (num_frames, feature_dim) matrix")
    n = frames.shape[0]
    bounds = np.arange(0, n + window, window)
    bounds[-1] = min(bounds[-1], n)
    return np.stack(
        [frames[lo:hi].mean(axis=0) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
    )


def frontend_pool(
    frames: np.ndarray, window: int, projection: np.ndarray | None = None
) -> np.ndarray:
    """Pooled frames mapped into the decoder's embedding space.

    `projection` is the (feature_dim, model_dim) matrix from the params;
    None means identity (requires feature_dim == model_dim).
    """
    pooled = pool_frames(frames, window)
    if projection is None:
        return pooled
    return pooled @ projection


def pad_windows(pooled: np.ndarray, target_rows: int) -> np.ndarray:
    """Zero-pad pooled rows up to a fixed count.

    Keeping the audio segment a constant length anchors the response block
    at one absolute position, which a small learned-position model needs to
    align response slots with their audio windows. No-op when target_rows
    is 0 or already met.
    """
    if target_rows <= pooled.shape[0]:
        return pooled
    pad = np.zeros((target_rows - pooled.shape[0], pooled.shape[1]), dtype=pooled.dtype)
    return np.concatenate([pooled, pad], axis=0)
