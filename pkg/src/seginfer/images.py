"""Image data model, grayscale I/O, noise model, and linear preprocessing.

Images are flat float vectors with 2-D shape metadata; the pixel vector is
the only random quantity in the whole pipeline. Preprocessing stages (blur,
3x3 filters) are fixed linear maps materialized as sparse matrices so they
can be applied to data, to contrast vectors, and to line decompositions
alike.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

from .errors import InputError, SegmentationError


@dataclass(frozen=True)
class Image:
    """A grayscale image as a flat row-major pixel vector."""

    pixels: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=float)
        object.__setattr__(self, "pixels", px)
        if px.ndim != 1 or px.size != self.width * self.height:
            raise InputError("pixel vector does not match width*height")
        if px.size < 2:
            raise InputError("image must have at least 2 pixels")
        if not np.all(np.isfinite(px)):
            raise InputError("image contains non-finite pixels")

    @property
    def n(self) -> int:
        return self.pixels.size

    def to_2d(self) -> np.ndarray:
        return self.pixels.reshape(self.height, self.width)

    @staticmethod
    def from_2d(arr) -> "Image":
        arr = np.asarray(arr, dtype=float)
        if arr.ndim != 2:
            raise InputError("expected a 2-D array")
        return Image(arr.reshape(-1), width=arr.shape[1], height=arr.shape[0])

    def with_pixels(self, pixels: np.ndarray) -> "Image":
        return Image(pixels, width=self.width, height=self.height)


@dataclass(frozen=True)
class NoiseModel:
    """Known or independently estimated pixel-noise covariance.

    ``isotropic`` models carry a single variance ``sigma2``; ``full`` models
    carry a dense SPD covariance matrix (validated by Cholesky).
    """

    kind: str
    sigma2: float = 0.0
    covariance: np.ndarray | None = None

    def __post_init__(self):
        if self.kind == "isotropic":
            if not self.sigma2 > 0.0:
                raise InputError("isotropic noise needs sigma2 > 0")
        elif self.kind == "full":
            cov = np.asarray(self.covariance, dtype=float)
            if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
                raise InputError("full covariance must be square")
            if not np.allclose(cov, cov.T, atol=1e-10):
                raise InputError("full covariance must be symmetric")
            try:
                np.linalg.cholesky(cov)
            except np.linalg.LinAlgError as exc:
                raise InputError("covariance is not positive definite") from exc
            object.__setattr__(self, "covariance", cov)
        else:
            raise InputError(f"unknown noise model kind {self.kind!r}")

    @staticmethod
    def isotropic(sigma2: float) -> "NoiseModel":
        return NoiseModel(kind="isotropic", sigma2=sigma2)

    @staticmethod
    def full(covariance) -> "NoiseModel":
        return NoiseModel(kind="full", covariance=covariance)

    def mul(self, v: np.ndarray) -> np.ndarray:
        """Sigma @ v without materializing Sigma in the isotropic case."""
        if self.kind == "isotropic":
            return self.sigma2 * v
        return self.covariance @ v


def estimate_noise(null_image: Image) -> NoiseModel:
    """Maximum-likelihood isotropic variance from an object-free image.

    Uses the biased divisor ``n``. A constant image has no estimable noise
    and is rejected.
    """
    px = null_image.pixels
    sigma2 = float(np.mean((px - px.mean()) ** 2))
    if sigma2 <= 0.0:
        raise SegmentationError("constant image: noise variance is zero")
    return NoiseModel.isotropic(sigma2)


# ---------------------------------------------------------------------------
# grayscale file I/O (PGM P2/P5 and 8-bit PNG)

def load_image(path, normalize: bool = True) -> Image:
    """Read an 8-bit grayscale PGM (P2/P5) or PNG file.

    With ``normalize`` the 0..255 values are mapped to [0, 1] via v/255.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    if raw[:2] in (b"P2", b"P5"):
        values, width, height = _parse_pgm(raw, path)
    elif raw[:8] == b"\x89PNG\r\n\x1a\n":
        values, width, height = _parse_png(path)
    else:
        raise InputError(f"{path}: not a PGM (P2/P5) or PNG file")
    if width * height < 2:
        raise InputError(f"{path}: image has fewer than 2 pixels")
    pixels = values / 255.0 if normalize else values
    return Image(pixels, width=width, height=height)


def _parse_pgm(raw: bytes, path) -> tuple[np.ndarray, int, int]:
    magic = raw[:2]
    tokens: list[bytes] = []
    pos = 2
    # header: width, height, maxval; '#' comments run to end of line
    while len(tokens) < 3 and pos < len(raw):
        ch = raw[pos:pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            end = raw.find(b"\n", pos)
            pos = len(raw) if end < 0 else end + 1
        else:
            end = pos
            while end < len(raw) and not raw[end:end + 1].isspace():
                end += 1
            tokens.append(raw[pos:end])
            pos = end
    if len(tokens) < 3:
        raise InputError(f"{path}: truncated PGM header")
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise InputError(f"{path}: malformed PGM header") from exc
    if width <= 0 or height <= 0:
        raise InputError(f"{path}: zero-sized image")
    if maxval != 255:
        raise InputError(f"{path}: only 8-bit PGM supported (maxval {maxval})")
    n = width * height
    if magic == b"P5":
        data = raw[pos + 1:pos + 1 + n]  # single whitespace byte after maxval
        if len(data) < n:
            raise InputError(f"{path}: truncated PGM pixel data")
        values = np.frombuffer(data, dtype=np.uint8, count=n).astype(float)
    else:
        try:
            values = np.array(raw[pos:].split()[:n], dtype=float)
        except ValueError as exc:
            raise InputError(f"{path}: malformed P2 pixel data") from exc
        if values.size < n:
            raise InputError(f"{path}: truncated P2 pixel data")
        if values.min() < 0 or values.max() > 255:
            raise InputError(f"{path}: P2 sample out of range")
    return values, width, height


def _parse_png(path) -> tuple[np.ndarray, int, int]:
    from PIL import Image as PILImage, UnidentifiedImageError

    try:
        with PILImage.open(path) as im:
            if im.mode != "L":
                raise InputError(
                    f"{path}: PNG mode {im.mode!r}; only 8-bit grayscale (L) supported")
            arr = np.asarray(im, dtype=float)
    except UnidentifiedImageError as exc:
        raise InputError(f"{path}: unreadable PNG") from exc
    return arr.reshape(-1), arr.shape[1], arr.shape[0]


def save_pgm(image: Image, path, assume_unit_range: bool = True) -> None:
    """Write a binary (P5) PGM; [0,1] data is rescaled to 0..255."""
    px = image.pixels
    if assume_unit_range:
        px = px * 255.0
    data = np.clip(np.rint(px), 0, 255).astype(np.uint8)
    header = f"P5\n{image.width} {image.height}\n255\n".encode()
    Path(path).write_bytes(header + data.tobytes())


# ---------------------------------------------------------------------------
# segmentation output

@dataclass(frozen=True)
class SegmentationResult:
    """Two-region pixel partition plus the choices that produced it."""

    object_idx: np.ndarray
    background_idx: np.ndarray
    algo: str
    params: dict = field(default_factory=dict)
    seeds: dict | None = None

    def __post_init__(self):
        obj = np.asarray(self.object_idx, dtype=int)
        bkg = np.asarray(self.background_idx, dtype=int)
        object.__setattr__(self, "object_idx", obj)
        object.__setattr__(self, "background_idx", bkg)

    def mask(self, image: Image) -> Image:
        """Binary mask image: object pixels 1.0 (saved as 255), rest 0."""
        m = np.zeros(image.n)
        m[self.object_idx] = 1.0
        return image.with_pixels(m)


# ---------------------------------------------------------------------------
# linear preprocessing

_STAGE_KINDS = ("identity", "gaussian_blur", "conv3x3")

#: 3x3 tap layout matching vec(F) = [f1..f9]: previous row (dx -1..1),
#: current row, next row
_CONV3X3_OFFSETS = [(-1, -1), (-1, 0), (-1, 1),
                    (0, -1), (0, 0), (0, 1),
                    (1, -1), (1, 0), (1, 1)]

_matrix_cache: dict = {}


@dataclass(frozen=True)
class LinearPreprocess:
    """An ordered pipeline of fixed linear image filters.

    Stages: ``("identity",)``, ``("gaussian_blur", size, sigma)`` with odd
    ``size`` (kernel truncated there and renormalized to sum 1), or
    ``("conv3x3", (f1, ..., f9))``. Out-of-image taps follow ``boundary``:
    ``"replicate"`` (default) or ``"zero"``.
    """

    stages: tuple = ()
    boundary: str = "replicate"

    def __post_init__(self):
        if self.boundary not in ("replicate", "zero"):
            raise InputError(f"unknown boundary mode {self.boundary!r}")
        stages = tuple(tuple(s) for s in self.stages)
        object.__setattr__(self, "stages", stages)
        for s in stages:
            if s[0] not in _STAGE_KINDS:
                raise InputError(f"unknown preprocess stage {s[0]!r}")
            if s[0] == "gaussian_blur":
                _, size, sigma = s
                if size % 2 != 1 or size < 1:
                    raise InputError("blur kernel size must be odd and positive")
                if not sigma > 0:
                    raise InputError("blur sigma must be positive")
            if s[0] == "conv3x3" and len(s[1]) != 9:
                raise InputError("conv3x3 needs exactly 9 coefficients")

    @staticmethod
    def identity() -> "LinearPreprocess":
        return LinearPreprocess(stages=())

    @staticmethod
    def gaussian_blur(size: int, sigma: float | None = None,
                      boundary: str = "replicate") -> "LinearPreprocess":
        """Single blur stage; sigma defaults to (size-1)/6 when omitted."""
        if sigma is None:
            sigma = (size - 1) / 6.0 if size > 1 else 1.0
        return LinearPreprocess(stages=(("gaussian_blur", size, sigma),),
                                boundary=boundary)

    @property
    def is_identity(self) -> bool:
        return all(s[0] == "identity" for s in self.stages)

    def matrix(self, width: int, height: int) -> sparse.csr_matrix:
        """The composed map as a sparse n-by-n matrix (cached)."""
        key = (self.stages, self.boundary, width, height)
        mat = _matrix_cache.get(key)
        if mat is None:
            n = width * height
            mat = sparse.identity(n, format="csr")
            for stage in self.stages:
                if stage[0] == "identity":
                    continue
                mat = _stage_matrix(stage, width, height, self.boundary) @ mat
            _matrix_cache[key] = mat
        return mat

    def apply(self, image: Image) -> Image:
        if self.is_identity:
            return image
        mat = self.matrix(image.width, image.height)
        return image.with_pixels(mat @ image.pixels)

    def describe(self) -> list:
        return [list(s) for s in self.stages]


def _stage_matrix(stage, width, height, boundary) -> sparse.csr_matrix:
    if stage[0] == "conv3x3":
        offsets = _CONV3X3_OFFSETS
        coefs = list(stage[1])
    else:
        _, size, sigma = stage
        half = size // 2
        taps = np.exp(-0.5 * ((np.arange(size) - half) / sigma) ** 2)
        taps /= taps.sum()
        offsets = [(dy, dx) for dy in range(-half, half + 1)
                   for dx in range(-half, half + 1)]
        coefs = [taps[dy + half] * taps[dx + half] for dy, dx in offsets]
    return _conv_matrix(offsets, coefs, width, height, boundary)


def _conv_matrix(offsets, coefs, width, height, boundary) -> sparse.csr_matrix:
    n = width * height
    rows_grid, cols_grid = np.divmod(np.arange(n), width)
    rr_all, cc_all, data_all = [], [], []
    for (dy, dx), coef in zip(offsets, coefs):
        if coef == 0.0:
            continue
        r2 = rows_grid + dy
        c2 = cols_grid + dx
        if boundary == "replicate":
            r2 = np.clip(r2, 0, height - 1)
            c2 = np.clip(c2, 0, width - 1)
            keep = slice(None)
        else:
            keep = (r2 >= 0) & (r2 < height) & (c2 >= 0) & (c2 < width)
        src = (r2 * width + c2)[keep]
        dst = np.arange(n)[keep]
        rr_all.append(dst)
        cc_all.append(src)
        data_all.append(np.full(dst.size, coef))
    mat = sparse.coo_matrix(
        (np.concatenate(data_all),
         (np.concatenate(rr_all), np.concatenate(cc_all))),
        shape=(n, n))
    return mat.tocsr()
