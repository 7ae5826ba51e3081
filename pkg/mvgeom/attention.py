###############################################################################
# Spatio-temporal attention with a growing spatial field
#
# Tokens are the cells of an (N, H, W, C) block: N frames of H x W
# positions. With spatial field f the positions are grouped in f x f
# blocks (block of position (r, c) is (r // f, c // f)); a token attends to
# every token of any frame whose position falls in the same block. f = 1
# reduces to attention across frames at identical positions, f >= max(H, W)
# to dense attention over all N * H * W tokens.
#

import numpy as np
from scipy.special import softmax

from ._base import DomainError

__all__ = ["AttentionParams", "AttentionFieldSchedule", "positional_encoding",
           "stt_attention", "temporal_attention_1d", "dense_attention",
           "attention_mask", "attention_weights", "field_at_step"]


class AttentionParams(object):
    """Fixed single-head projection weights.

    Positional encodings scaled by ``pe_scale`` are added to the inputs of
    the query and key projections only, values carry content alone.
    ``wo`` is an optional output projection.
    """

    def __init__(self, wq, wk, wv, wo=None, pe_scale=1.0):
        wq, wk, wv = (np.asarray(w, dtype=np.float64) for w in (wq, wk, wv))
        if wq.shape != wk.shape or wq.ndim != 2:
            raise DomainError("Query and key projections must be equal 2D "
                              "matrices")
        if wv.ndim != 2 or wv.shape[0] != wq.shape[0]:
            raise DomainError("Value projection has shape {}, expected {} "
                              "input channels".format(wv.shape, wq.shape[0]))
        if wo is not None:
            wo = np.asarray(wo, dtype=np.float64)
            if wo.ndim != 2 or wo.shape[0] != wv.shape[1]:
                raise DomainError("Output projection has shape {}, expected "
                                  "{} input channels"
                                  .format(wo.shape, wv.shape[1]))
        self.wq, self.wk, self.wv, self.wo = wq, wk, wv, wo
        self.pe_scale = float(pe_scale)

    @classmethod
    def random(cls, channels, seed=0, pe_scale=1.0, scale=None):
        rng = np.random.default_rng(seed)
        scale = 1. / np.sqrt(channels) if scale is None else scale
        wq, wk, wv = (rng.normal(scale=scale, size=(channels, channels))
                      for _ in range(3))
        return cls(wq, wk, wv, pe_scale=pe_scale)

    @classmethod
    def identity_values(cls, channels, pe_scale=0.):
        """Zero queries and keys with identity values: uniform averaging."""
        zeros = np.zeros((channels, channels))
        return cls(zeros, zeros, np.eye(channels), pe_scale=pe_scale)

    @property
    def channels(self):
        return self.wq.shape[0]


class AttentionFieldSchedule(object):
    """Spatial field doubling every ``steps_per_doubling`` training steps."""

    __slots__ = ["start_resolution", "end_resolution", "steps_per_doubling"]

    def __init__(self, start_resolution=1, end_resolution=64,
                 steps_per_doubling=10000):
        for value in (start_resolution, end_resolution):
            _check_field(value)
        if start_resolution > end_resolution:
            raise DomainError("start_resolution {} exceeds end_resolution {}"
                              .format(start_resolution, end_resolution))
        if steps_per_doubling < 1:
            raise DomainError("steps_per_doubling must be positive")
        self.start_resolution = int(start_resolution)
        self.end_resolution = int(end_resolution)
        self.steps_per_doubling = int(steps_per_doubling)


def field_at_step(schedule, train_step):
    """min(end, start * 2 ** (train_step // steps_per_doubling))."""
    if train_step < 0:
        raise DomainError("train_step must be >= 0, got {}"
                          .format(train_step))
    doublings = int(train_step) // schedule.steps_per_doubling
    # Past this many doublings the field is clamped anyway.
    limit = schedule.end_resolution.bit_length()
    field = schedule.start_resolution << min(doublings, limit)
    return min(schedule.end_resolution, field)


def _check_field(field):
    if int(field) != field or field < 1 or int(field) & (int(field) - 1):
        raise DomainError("Attention field must be a power of two, got {}"
                          .format(field))
    return int(field)


def _check_tokens(x, params):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4 or x.shape[0] < 1:
        raise DomainError("Token block must be (N, H, W, C), got shape {}"
                          .format(x.shape))
    if x.shape[3] != params.channels:
        raise DomainError("Token block has {} channels, projections expect "
                          "{}".format(x.shape[3], params.channels))
    if not np.all(np.isfinite(x)):
        raise DomainError("Token block must be finite")
    return x


def positional_encoding(n, h, w, channels):
    """Fixed sinusoidal encoding over (frame, row, col), shape (n, h, w, C).

    Channel c encodes axis c % 3 with frequency index (c // 3) // 2,
    alternating sine and cosine.
    """
    frame, row, col = np.meshgrid(np.arange(n), np.arange(h), np.arange(w),
                                  indexing="ij")
    axes = (frame, row, col)
    pe = np.empty((n, h, w, channels))
    for c in range(channels):
        k = c // 3
        rate = 10000. ** (-2. * (k // 2) / max(channels, 1))
        angle = axes[c % 3] * rate
        pe[..., c] = np.sin(angle) if k % 2 == 0 else np.cos(angle)
    return pe


def _project(x, params):
    pe = params.pe_scale * positional_encoding(*x.shape)
    q = (x + pe).dot(params.wq)
    k = (x + pe).dot(params.wk)
    v = x.dot(params.wv)
    return q, k, v


def _finish(out, params):
    if params.wo is not None:
        out = out.dot(params.wo)
    return out


def _attend(q, k, v, key_valid=None):
    # q, k, v: (..., T, D); key_valid: (..., T) or None
    logits = np.einsum("...id,...jd->...ij", q, k) / np.sqrt(q.shape[-1])
    if key_valid is not None:
        logits = np.where(key_valid[..., None, :], logits, -np.inf)
    return np.einsum("...ij,...jd->...id", softmax(logits, axis=-1), v)


def dense_attention(x, params):
    """Unmasked attention over all N * H * W tokens."""
    x = _check_tokens(x, params)
    n, h, w, _ = x.shape
    q, k, v = _project(x, params)
    flat = [a.reshape(n * h * w, -1) for a in (q, k, v)]
    out = _attend(*flat).reshape(n, h, w, -1)
    return _finish(out, params)


def temporal_attention_1d(x, params):
    """Attention across the N frames, independently at every position."""
    x = _check_tokens(x, params)
    q, k, v = (np.moveaxis(a, 0, 2) for a in _project(x, params))
    out = np.moveaxis(_attend(q, k, v), 2, 0)
    return _finish(out, params)


def _to_blocks(a, f):
    # (N, H, W, D) with H, W multiples of f -> (blocks, N * f * f, D)
    n, h, w, d = a.shape
    a = a.reshape(n, h // f, f, w // f, f, d).transpose(1, 3, 0, 2, 4, 5)
    return a.reshape((h // f) * (w // f), n * f * f, d)


def _from_blocks(a, n, h, w, f):
    d = a.shape[-1]
    a = a.reshape(h // f, w // f, n, f, f, d).transpose(2, 0, 3, 1, 4, 5)
    return a.reshape(n, h, w, d)


def stt_attention(x, field, params):
    """Block-local spatio-temporal attention with spatial field ``field``.

    ``field`` must be a power of two; fields beyond max(H, W) act as the
    full grid. Grids that are not multiples of the field are padded and
    padded keys are masked out.
    """
    x = _check_tokens(x, params)
    f = _check_field(field)
    n, h, w, _ = x.shape
    f = min(f, max(h, w))
    hp, wp = -(-h // f) * f, -(-w // f) * f
    q, k, v = _project(x, params)
    pad = ((0, 0), (0, hp - h), (0, wp - w), (0, 0))
    valid = np.zeros((n, hp, wp, 1), dtype=bool)
    valid[:, :h, :w] = True
    blocks = [_to_blocks(np.pad(a, pad), f) for a in (q, k, v)]
    key_valid = _to_blocks(valid, f)[..., 0]
    out = _from_blocks(_attend(*blocks, key_valid=key_valid), n, hp, wp, f)
    return _finish(out[:, :h, :w], params)


def attention_mask(n, h, w, field):
    """(N*H*W, N*H*W) boolean mask of the token pairs allowed to interact.

    Tokens are ordered frame-major then row-major, as ``x.reshape(-1, C)``.
    """
    f = _check_field(field)
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    block = ((rows // f) * (-(-w // f)) + cols // f).ravel()
    block = np.tile(block, n)
    return block[:, None] == block[None, :]


def attention_weights(x, field, params):
    """Row-stochastic attention matrix of :func:`stt_attention`."""
    x = _check_tokens(x, params)
    n, h, w, _ = x.shape
    q, k, _ = (a.reshape(n * h * w, -1) for a in _project(x, params))
    logits = q.dot(k.T) / np.sqrt(q.shape[-1])
    mask = attention_mask(n, h, w, min(_check_field(field), max(h, w)))
    return softmax(np.where(mask, logits, -np.inf), axis=-1)
