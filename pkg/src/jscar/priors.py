"""Perceptual prior maps computed from image pairs.

Three single-channel maps in [0, 1] feed the scoring network and the
qualitative tooling:

* a visual saliency map from an approximate minimum-barrier-distance
  transform (alternating raster sweeps from the image border),
* a detection-probability map for the distortion between a reference
  and a distorted image, built from 8x8 block DCT coefficients with
  frequency, luminance and texture-dependent visibility thresholds,
* the plain squared image difference, kept for side-by-side comparison.

All maps can also be loaded from 8-bit grayscale files when
externally-computed priors are preferred.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np
from PIL import Image

# ITU-R BT.601 luma weights
_LUMA = np.array([0.299, 0.587, 0.114])

# Base visibility thresholds per 8x8 DCT frequency, derived from the
# standard JPEG luminance quantization table scaled by 0.5 so that the
# DC threshold (8.0 in orthonormal-DCT units) equals the coefficient
# change caused by a one-gray-level uniform shift of the block.
_BASE_THRESHOLDS = 0.5 * np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)


@dataclass
class JndModelParams:
    """Tunable constants of the detection-probability model.

    ``beta`` is the psychometric-function slope. ``base_thresholds``
    holds per-frequency visibility thresholds for 8x8 DCT coefficients.
    The luminance gains shape the U-curve that raises thresholds in dark
    and bright blocks; ``cm_scale``/``cm_exponent`` control how much
    local texture energy masks distortion.
    """

    beta: float = 4.0
    base_thresholds: np.ndarray = field(default_factory=lambda: _BASE_THRESHOLDS.copy())
    lum_dark_gain: float = 2.0
    lum_bright_gain: float = 1.0
    cm_scale: float = 16.0
    cm_exponent: float = 0.6

    def __post_init__(self):
        self.base_thresholds = np.asarray(self.base_thresholds, dtype=np.float64)
        if self.beta <= 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if self.base_thresholds.shape != (8, 8) or np.any(self.base_thresholds <= 0):
            raise ValueError("base_thresholds must be a positive 8x8 table")


# ----------------------------------------------------------------------
# image helpers
# ----------------------------------------------------------------------

def check_gray_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2-D grayscale array, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} is empty")
    if arr.min() < 0 or arr.max() > 255:
        raise ValueError(f"{name} values must lie in [0, 255]")
    return arr


def to_luma(img: np.ndarray) -> np.ndarray:
    """Collapse an (H, W, 3) image in [0, 255] to BT.601 luma; pass grayscale through."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        return arr
    if arr.ndim == 3 and arr.shape[2] == 3:
        return arr @ _LUMA
    raise ValueError(f"expected (H, W) or (H, W, 3) image, got shape {arr.shape}")


def load_image(path) -> np.ndarray:
    """Read a PNG/BMP as float64 in [0, 255]; (H, W) for gray, (H, W, 3) for color."""
    try:
        with Image.open(path) as im:
            if im.mode == "L":
                return np.asarray(im, dtype=np.float64)
            return np.asarray(im.convert("RGB"), dtype=np.float64)
    except OSError as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc


def save_gray_image(path, values: np.ndarray) -> None:
    """Write a [0, 255] float array as an 8-bit grayscale image."""
    arr = np.clip(np.asarray(values, dtype=np.float64), 0, 255)
    Image.fromarray(np.round(arr).astype(np.uint8), mode="L").save(path)


def load_prior(path) -> np.ndarray:
    """Load an 8-bit grayscale file as a prior map in [0, 1]."""
    try:
        with Image.open(path) as im:
            if im.mode != "L":
                raise ValueError(
                    f"prior map {path} must be 8-bit grayscale, got mode {im.mode!r}"
                )
            return np.asarray(im, dtype=np.float64) / 255.0
    except OSError as exc:
        raise OSError(f"cannot read prior map {path}: {exc}") from exc


def save_prior(path, prior: np.ndarray) -> None:
    """Write a [0, 1] prior map as an 8-bit grayscale image."""
    arr = np.asarray(prior, dtype=np.float64)
    if arr.min() < 0 or arr.max() > 1:
        raise ValueError("prior map values must lie in [0, 1]")
    save_gray_image(path, arr * 255.0)


# ----------------------------------------------------------------------
# squared image difference
# ----------------------------------------------------------------------

def compute_sid_map(ref: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Per-pixel squared difference rescaled by its maximum to [0, 1]."""
    ref = check_gray_image(ref, "ref")
    dst = check_gray_image(dst, "dst")
    if ref.shape != dst.shape:
        raise ValueError(f"dimension mismatch: ref {ref.shape} vs dst {dst.shape}")
    sq = (ref - dst) ** 2
    peak = sq.max()
    return sq / peak if peak > 0 else sq


# ----------------------------------------------------------------------
# minimum-barrier saliency
# ----------------------------------------------------------------------

def compute_saliency_mbd(img: np.ndarray, passes: int = 4, normalize: bool = True) -> np.ndarray:
    """Approximate minimum barrier distance to the image border.

    The barrier cost of a path is the max-minus-min intensity along it;
    every border pixel is a zero-distance seed. Alternating raster and
    inverse-raster sweeps relax each pixel from its already-visited
    neighbors, which converges toward the exact distance from above.
    The result is normalized to [0, 1] by its maximum (all zeros for a
    constant image); ``normalize=False`` returns raw barrier distances.
    """
    img = check_gray_image(img)
    if passes < 2 or passes % 2:
        raise ValueError(f"passes must be an even count >= 2, got {passes}")
    h, w = img.shape
    if h < 3 or w < 3:
        raise ValueError(f"image must be at least 3x3, got {h}x{w}")

    # plain lists: the sweeps are sequential by nature and python-level
    # indexing on lists is much faster than on ndarrays
    pix = img.tolist()
    lo = img.tolist()
    hi = img.tolist()
    dist = [[math.inf] * w for _ in range(h)]
    for x in range(h):
        dist[x][0] = dist[x][w - 1] = 0.0
    for y in range(w):
        dist[0][y] = dist[h - 1][y] = 0.0

    for sweep in range(passes):
        if sweep % 2 == 0:
            xs, ys, dx, dy = range(1, h - 1), range(1, w - 1), -1, -1
        else:
            xs, ys, dx, dy = range(h - 2, 0, -1), range(w - 2, 0, -1), 1, 1
        for x in xs:
            row_p, row_l, row_h, row_d = pix[x], lo[x], hi[x], dist[x]
            nbr_l, nbr_h, nbr_d = lo[x + dx], hi[x + dx], dist[x + dx]
            for y in ys:
                v = row_p[y]
                best = row_d[y]
                # vertical neighbor
                nh = nbr_h[y] if nbr_h[y] > v else v
                nl = nbr_l[y] if nbr_l[y] < v else v
                cand = nh - nl
                cv = cand if nbr_d[y] <= cand else nbr_d[y]
                if cv < best:
                    best = cv
                    row_d[y], row_h[y], row_l[y] = cv, nh, nl
                # horizontal neighbor
                yy = y + dy
                nh = row_h[yy] if row_h[yy] > v else v
                nl = row_l[yy] if row_l[yy] < v else v
                cand = nh - nl
                ch = cand if row_d[yy] <= cand else row_d[yy]
                if ch < best:
                    row_d[y], row_h[y], row_l[y] = ch, nh, nl

    out = np.array(dist, dtype=np.float64)
    if not normalize:
        return out
    peak = out.max()
    return out / peak if peak > 0 else out


# ----------------------------------------------------------------------
# detection-probability map
# ----------------------------------------------------------------------

def _dct_matrix() -> np.ndarray:
    i = np.arange(8)
    mat = np.cos((2 * i[None, :] + 1) * i[:, None] * np.pi / 16.0)
    mat *= np.sqrt(2.0 / 8.0)
    mat[0, :] = np.sqrt(1.0 / 8.0)
    return mat


_DCT = _dct_matrix()


def _blockify(img: np.ndarray) -> np.ndarray:
    """Edge-pad to multiples of 8 and return (Hb, Wb, 8, 8) blocks."""
    h, w = img.shape
    ph, pw = (-h) % 8, (-w) % 8
    if ph or pw:
        img = np.pad(img, ((0, ph), (0, pw)), mode="edge")
    hb, wb = img.shape[0] // 8, img.shape[1] // 8
    return img.reshape(hb, 8, wb, 8).transpose(0, 2, 1, 3)


def compute_jnd_probability(
    ref: np.ndarray, dst: np.ndarray, params: JndModelParams | None = None
) -> np.ndarray:
    """Probability that the ref/dst difference is visible, per 8x8 block.

    For each block the reference and distorted images are transformed
    with an orthonormal 8x8 DCT. Each coefficient difference is compared
    against a visibility threshold

        T_uv = base_uv * lum(mean luma) * texture(AC energy of ref),

    where ``lum`` is a U-shaped curve (dark and bright blocks tolerate
    more) and ``texture`` grows with the reference block's AC energy
    (busy blocks mask distortion). Detection of a single coefficient
    follows 1 - exp(-(|dC|/T)^beta) and the block probability combines
    coefficients as independent detectors (noisy-OR). The block value is
    broadcast to its 64 pixels and the map cropped to the input size.
    """
    params = params or JndModelParams()
    ref = check_gray_image(ref, "ref")
    dst = check_gray_image(dst, "dst")
    if ref.shape != dst.shape:
        raise ValueError(f"dimension mismatch: ref {ref.shape} vs dst {dst.shape}")
    h, w = ref.shape

    rb = _blockify(ref)
    db = _blockify(dst)
    cref = _DCT @ rb @ _DCT.T
    cdst = _DCT @ db @ _DCT.T
    delta = np.abs(cdst - cref)

    mean_luma = rb.mean(axis=(2, 3)) / 255.0
    dev = 2.0 * mean_luma - 1.0
    gain = np.where(dev < 0, params.lum_dark_gain, params.lum_bright_gain)
    lum_factor = 1.0 + gain * dev**2

    ac_energy = cref**2
    ac_energy[:, :, 0, 0] = 0.0
    texture = np.sqrt(ac_energy.mean(axis=(2, 3)))
    cm_factor = (1.0 + texture / params.cm_scale) ** params.cm_exponent

    thresholds = (
        params.base_thresholds[None, None, :, :]
        * lum_factor[:, :, None, None]
        * cm_factor[:, :, None, None]
    )
    p_coeff = 1.0 - np.exp(-((delta / thresholds) ** params.beta))
    p_block = 1.0 - np.prod(1.0 - p_coeff, axis=(2, 3))

    full = np.repeat(np.repeat(p_block, 8, axis=0), 8, axis=1)
    return np.clip(full[:h, :w], 0.0, 1.0)
