###############################################################################
# Feature grids and their file formats
#
# FGRID: the ASCII header "FGRID 1\n<H> <W> <C>\n" followed by H*W*C
# little-endian float32 values, row-major with the channel index fastest.
# RGB grids are also exported as binary PPM (P6, maxval 255) for viewing.
#

import numpy as np
from PIL import Image
from scipy import ndimage

from ._base import LOGGER, DomainError, FormatError

__all__ = ["FeatureGrid", "read_grid", "write_grid", "write_ppm",
           "resize_bilinear", "bilinear_sample", "min_pool"]

_MAGIC = b"FGRID 1"
_PAYLOAD_DTYPE = np.dtype("<f4")
_PAYLOAD_MAX = np.finfo(_PAYLOAD_DTYPE).max


class FeatureGrid(object):
    """H x W x C grid of finite scalars.

    The same type stores images (C=3), latents (C=4), depth maps and masks
    (C=1). ``data`` is an (H, W, C) float array; computations keep float64
    while files always hold float32.
    """

    __slots__ = ["data"]

    def __init__(self, data):
        data = np.asarray(data)
        if data.dtype not in (np.float32, np.float64):
            data = data.astype(np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or min(data.shape) < 1:
            raise DomainError("FeatureGrid needs a non-empty (H, W, C) "
                              "array, got shape {}".format(data.shape))
        if not np.all(np.isfinite(data)):
            raise DomainError("FeatureGrid values must be finite")
        self.data = data

    @classmethod
    def zeros(cls, height, width, channels=1, dtype=np.float64):
        return cls(np.zeros((height, width, channels), dtype=dtype))

    @classmethod
    def full(cls, height, width, channels, value, dtype=np.float64):
        return cls(np.full((height, width, channels), value, dtype=dtype))

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def channels(self):
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape

    def channel(self, index=0):
        """(H, W) view of one channel."""
        return self.data[:, :, index]

    def copy(self):
        return FeatureGrid(self.data.copy())

    def same_shape(self, other):
        return self.data.shape == other.data.shape

    def __eq__(self, other):
        return (isinstance(other, FeatureGrid) and
                self.data.shape == other.data.shape and
                np.array_equal(self.data, other.data))

    def __ne__(self, other):
        return not self == other

    def __repr__(self):
        return "FeatureGrid({}x{}x{}, dtype={})".format(
            self.height, self.width, self.channels, self.data.dtype)


def as_array(grid):
    """Return the (H, W, C) array of a FeatureGrid or of an array."""
    if isinstance(grid, FeatureGrid):
        return grid.data
    return FeatureGrid(grid).data


###############################################################################
# FGRID and PPM files
#

def write_grid(grid, path):
    """Write ``grid`` as a FGRID file (values are stored as float32)."""
    data = as_array(grid)
    if data.size and np.abs(data).max() > _PAYLOAD_MAX:
        raise DomainError("{}: values beyond the float32 range cannot be "
                          "stored".format(path))
    h, w, c = data.shape
    header = _MAGIC + b"\n" + "{} {} {}\n".format(h, w, c).encode("ascii")
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(data, dtype=_PAYLOAD_DTYPE).tobytes())
    LOGGER.debug("Wrote {}x{}x{} grid to {}".format(h, w, c, path))


def _parse_header(blob, path):
    first = blob.find(b"\n")
    second = blob.find(b"\n", first + 1)
    if first < 0 or second < 0 or blob[:first] != _MAGIC:
        raise FormatError("{}: not a FGRID file".format(path))
    fields = blob[first + 1:second].split()
    if len(fields) != 3:
        raise FormatError("{}: malformed size line".format(path))
    try:
        h, w, c = (int(x) for x in fields)
    except ValueError:
        raise FormatError("{}: malformed size line".format(path))
    if min(h, w, c) < 1:
        raise FormatError("{}: empty grid {}x{}x{}".format(path, h, w, c))
    return (h, w, c), second + 1


def read_grid(path):
    """Read a FGRID file into a float32 FeatureGrid."""
    with open(path, "rb") as f:
        blob = f.read()
    shape, offset = _parse_header(blob, path)
    expected = int(np.prod(shape)) * _PAYLOAD_DTYPE.itemsize
    payload = blob[offset:]
    if len(payload) != expected:
        raise FormatError("{}: header announces {} payload bytes, found {}"
                          .format(path, expected, len(payload)))
    data = np.frombuffer(payload, dtype=_PAYLOAD_DTYPE).reshape(shape)
    if not np.all(np.isfinite(data)):
        raise FormatError("{}: payload holds non finite values".format(path))
    return FeatureGrid(data.astype(np.float32))


def write_ppm(grid, path):
    """Write an RGB (or grey, C=1) grid with values in [0, 1] as binary PPM.
    """
    data = as_array(grid)
    if data.shape[2] == 1:
        data = np.repeat(data, 3, axis=2)
    elif data.shape[2] != 3:
        raise DomainError("PPM export needs 1 or 3 channels, got {}"
                          .format(data.shape[2]))
    pixels = np.round(np.clip(data, 0., 1.) * 255.).astype(np.uint8)
    Image.fromarray(pixels).save(path, format="PPM")
    LOGGER.debug("Wrote PPM image {}".format(path))


###############################################################################
# Resampling
#

def bilinear_sample(data, u, v):
    """Bilinearly sample an (H, W, C) array at float pixel coordinates.

    Returns (values, inside) where values has shape u.shape + (C,) and
    ``inside`` flags coordinates within the pixel-centre range
    [0, W-1] x [0, H-1]. Outside samples are clamped to the border.
    """
    data = np.asarray(data, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    h, w = data.shape[:2]
    inside = ((u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1) &
              np.isfinite(u) & np.isfinite(v))
    coords = np.stack([np.where(inside, v, 0.).ravel(),
                       np.where(inside, u, 0.).ravel()])
    values = np.empty((u.size, data.shape[2]))
    for c in range(data.shape[2]):
        values[:, c] = ndimage.map_coordinates(data[:, :, c], coords,
                                               order=1, mode="nearest")
    return values.reshape(u.shape + (data.shape[2],)), inside


def _align_corners(size, new_size):
    if new_size == 1:
        return np.array([(size - 1) / 2.])
    return np.linspace(0., size - 1., new_size)


def resize_bilinear(grid, out_h, out_w):
    """Resize with bilinear interpolation and edge clamping.

    Output cell i samples the input at i (H - 1) / (out_h - 1) (align
    corners), which keeps constants constant, reproduces affine ramps
    exactly and never overshoots the input range.
    """
    if out_h < 1 or out_w < 1:
        raise DomainError("Output size must be at least 1x1, got {}x{}"
                          .format(out_h, out_w))
    data = as_array(grid)
    h, w = data.shape[:2]
    if (h, w) == (out_h, out_w):
        return FeatureGrid(data.copy())
    rows = _align_corners(h, out_h)
    cols = _align_corners(w, out_w)
    v, u = np.meshgrid(rows, cols, indexing="ij")
    values, _ = bilinear_sample(data, u, v)
    # Interpolation may leave the range by an ulp; clamp to the input range.
    values = np.clip(values, data.min(axis=(0, 1)), data.max(axis=(0, 1)))
    return FeatureGrid(values.astype(data.dtype))


def _cell_ranges(size, new_size):
    starts = (np.arange(new_size) * size) // new_size
    stops = -((-(np.arange(1, new_size + 1) * size)) // new_size)
    return starts, stops


def _pool(grid, out_h, out_w, reducer):
    data = as_array(grid)
    h, w = data.shape[:2]
    if out_h < 1 or out_w < 1 or out_h > h or out_w > w:
        raise DomainError("Pooling {}x{} to {}x{} is not a downsampling"
                          .format(h, w, out_h, out_w))
    if h % out_h == 0 and w % out_w == 0:
        blocks = data.reshape(out_h, h // out_h, out_w, w // out_w, -1)
        return FeatureGrid(reducer(blocks, axis=(1, 3)))
    r0, r1 = _cell_ranges(h, out_h)
    c0, c1 = _cell_ranges(w, out_w)
    out = np.empty((out_h, out_w, data.shape[2]), dtype=data.dtype)
    for i in range(out_h):
        for j in range(out_w):
            out[i, j] = reducer(data[r0[i]:r1[i], c0[j]:c1[j]], axis=(0, 1))
    return FeatureGrid(out)


def min_pool(mask, out_h, out_w):
    """Downsample by taking the minimum over the covered source cells.

    For binary masks an output cell is 1 only when every source cell it
    covers is 1.
    """
    return _pool(mask, out_h, out_w, np.min)
