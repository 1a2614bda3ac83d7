"""Image transforms used by the audit: Fourier log-magnitude images,
single-level 2D wavelet mosaics (Haar / Daubechies), median filtering,
and left-to-right compositions of these.

All operations are stateless, run in double precision, and never change
the channel count. Transform descriptions have a textual grammar for the
CLI: `identity`, `fourier`, `wavelet:haar`, `wavelet:db2`,
`wavelet:haar:approx`, `median:5`, with compositions joined by `+`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import TransformSpecError
from .imgio import validate_image


# ---------------------------------------------------------------------------
# Transform descriptions


@dataclass(frozen=True)
class Identity:
    pass


@dataclass(frozen=True)
class Fourier:
    pass


@dataclass(frozen=True)
class Wavelet:
    family: str = "haar"   # "haar" or "dbN" with N >= 2
    output: str = "mosaic"  # "mosaic" | "approx"


@dataclass(frozen=True)
class Median:
    window: int = 5


@dataclass(frozen=True)
class Compose:
    steps: tuple


TransformSpec = Identity | Fourier | Wavelet | Median | Compose


def validate_spec(spec: TransformSpec) -> TransformSpec:
    if isinstance(spec, (Identity, Fourier)):
        return spec
    if isinstance(spec, Wavelet):
        _wavelet_filters(spec.family)
        if spec.output not in ("mosaic", "approx"):
            raise TransformSpecError(f"unknown wavelet output {spec.output!r}")
        return spec
    if isinstance(spec, Median):
        if spec.window < 3 or spec.window % 2 == 0:
            raise TransformSpecError(
                f"median window must be odd and >= 3, got {spec.window}")
        return spec
    if isinstance(spec, Compose):
        if not spec.steps:
            raise TransformSpecError("compose list must be nonempty")
        for step in spec.steps:
            if isinstance(step, Compose):
                raise TransformSpecError("compose must not nest")
            validate_spec(step)
        return spec
    raise TransformSpecError(f"not a transform spec: {spec!r}")


def parse_transform(text: str) -> TransformSpec:
    """Parse one transform expression, e.g. `median:5+wavelet:haar`."""
    atoms = [t.strip() for t in text.split("+")]
    steps = tuple(_parse_atom(a) for a in atoms)
    if len(steps) == 1:
        return steps[0]
    return validate_spec(Compose(steps))


def _parse_atom(token: str) -> TransformSpec:
    parts = token.split(":")
    head = parts[0].lower()
    if head == "identity" and len(parts) == 1:
        return Identity()
    if head == "fourier" and len(parts) == 1:
        return Fourier()
    if head == "wavelet" and len(parts) in (2, 3):
        family = parts[1].lower()
        output = "mosaic"
        if len(parts) == 3:
            if parts[2].lower() != "approx":
                raise TransformSpecError(f"bad wavelet mode in {token!r}")
            output = "approx"
        return validate_spec(Wavelet(family=family, output=output))
    if head == "median" and len(parts) == 2:
        try:
            window = int(parts[1])
        except ValueError:
            raise TransformSpecError(f"bad median window in {token!r}") from None
        return validate_spec(Median(window=window))
    raise TransformSpecError(f"unknown transform token {token!r}")


def parse_transform_list(text: str) -> list:
    return [parse_transform(t) for t in text.split(",") if t.strip()]


def format_transform(spec: TransformSpec) -> str:
    if isinstance(spec, Identity):
        return "identity"
    if isinstance(spec, Fourier):
        return "fourier"
    if isinstance(spec, Wavelet):
        base = f"wavelet:{spec.family}"
        return base + (":approx" if spec.output == "approx" else "")
    if isinstance(spec, Median):
        return f"median:{spec.window}"
    if isinstance(spec, Compose):
        return "+".join(format_transform(s) for s in spec.steps)
    raise TransformSpecError(f"not a transform spec: {spec!r}")


def default_audit_transforms() -> list:
    """The four experimental conditions of the default audit."""
    return [
        Fourier(),
        Wavelet("haar"),
        Median(5),
        Compose((Median(5), Wavelet("haar"))),
    ]


def contains_fourier(spec: TransformSpec) -> bool:
    if isinstance(spec, Fourier):
        return True
    if isinstance(spec, Compose):
        return any(isinstance(s, Fourier) for s in spec.steps)
    return False


# ---------------------------------------------------------------------------
# Fourier


def dft2_forward(channel: np.ndarray) -> np.ndarray:
    """Unnormalized forward 2D DFT of one real channel.

    F[u, v] = sum_x sum_y f[x, y] exp(-2*pi*i*(u*x/H + v*y/W)); the output
    grid has the same dimensions as the input.
    """
    channel = np.asarray(channel, dtype=np.float64)
    if channel.ndim != 2 or channel.shape[0] < 1 or channel.shape[1] < 1:
        raise TransformSpecError(f"expected a 2D grid, got shape {channel.shape}")
    return np.fft.fft2(channel)


def _minmax01(grid: np.ndarray) -> np.ndarray:
    lo = grid.min()
    hi = grid.max()
    if hi - lo <= 0.0:
        return np.zeros_like(grid)
    return (grid - lo) / (hi - lo)


def fourier_log_magnitude_image(img: np.ndarray) -> np.ndarray:
    """Per channel: log(1 + |DFT|), DC shifted to the center, min-max
    normalized to [0, 1]. An all-equal channel maps to all zeros."""
    validate_image(img)
    out = np.empty_like(img)
    for c in range(img.shape[2]):
        spec = np.log1p(np.abs(dft2_forward(img[:, :, c])))
        out[:, :, c] = _minmax01(np.fft.fftshift(spec))
    return out


# ---------------------------------------------------------------------------
# Wavelets

_SQRT2 = math.sqrt(2.0)
_HAAR_LO = np.array([1.0, 1.0]) / _SQRT2
_SQRT3 = math.sqrt(3.0)
_DB2_LO = np.array([1.0 + _SQRT3, 3.0 + _SQRT3, 3.0 - _SQRT3, 1.0 - _SQRT3]) \
    / (4.0 * _SQRT2)


def _daubechies_lowpass(order: int) -> np.ndarray:
    """Orthonormal Daubechies scaling filter with `order` vanishing moments,
    built by spectral factorization of the half-band polynomial."""
    if order == 1:
        return _HAAR_LO.copy()
    if order == 2:
        return _DB2_LO.copy()
    p = order
    # P(y) = sum_k C(p-1+k, k) y^k, evaluated at y = (2 - z - 1/z) / 4.
    y_poly = np.array([-0.25, 0.5, -0.25])  # z^1, z^0, z^-1 (symmetric)
    q = np.array([1.0])
    acc = np.array([float(math.comb(p - 1, 0))])
    power = np.array([1.0])
    for k in range(1, p):
        power = np.convolve(power, y_poly)
        term = math.comb(p - 1 + k, k) * power
        # align lengths (both symmetric Laurent polynomials)
        pad = (len(term) - len(acc)) // 2
        acc = np.pad(acc, (pad, pad)) + term
    roots = np.roots(acc)
    inside = [r for r in roots if abs(r) < 1.0 - 1e-12]
    q = np.array([1.0])
    for r in inside:
        q = np.convolve(q, np.array([1.0, -r]))
    q = np.real_if_close(q, tol=1e6).real
    # h(z) = ((1 + z^-1)/2)^p * q(z), then normalize to sum sqrt(2)
    h = q
    for _ in range(p):
        h = np.convolve(h, np.array([0.5, 0.5]))
    h = h * (_SQRT2 / h.sum())
    if abs(np.sum(h * h) - 1.0) > 1e-8:
        raise TransformSpecError(
            f"Daubechies order {order} factorization failed orthonormality")
    return h


def _wavelet_filters(family: str):
    """Analysis (low, high) filter pair for `haar` or `dbN` (N >= 2)."""
    fam = family.lower()
    if fam == "haar":
        lo = _HAAR_LO
    elif fam.startswith("db"):
        try:
            order = int(fam[2:])
        except ValueError:
            raise TransformSpecError(f"unknown wavelet family {family!r}") from None
        if order < 2:
            raise TransformSpecError(
                f"Daubechies order must be >= 2, got {order}")
        lo = _daubechies_lowpass(order)
    else:
        raise TransformSpecError(f"unknown wavelet family {family!r}")
    n = len(lo)
    hi = np.array([(-1.0) ** k * lo[n - 1 - k] for k in range(n)])
    return lo, hi


@dataclass
class SubbandSet:
    """The four half-resolution outputs of one 2D decomposition level."""

    ll: np.ndarray
    lh: np.ndarray
    hl: np.ndarray
    hh: np.ndarray


def _analyze_axis(x: np.ndarray, filt: np.ndarray, axis: int) -> np.ndarray:
    # y[n] = sum_k filt[k] * x[(2n + k) mod N], periodic extension
    acc = np.zeros_like(x)
    for k, c in enumerate(filt):
        acc = acc + c * np.roll(x, -k, axis=axis)
    sl = [slice(None)] * x.ndim
    sl[axis] = slice(0, None, 2)
    return acc[tuple(sl)]


def _synthesize_axis(a: np.ndarray, d: np.ndarray, lo: np.ndarray,
                     hi: np.ndarray, axis: int) -> np.ndarray:
    n = a.shape[axis] * 2
    shape = list(a.shape)
    shape[axis] = n
    up_a = np.zeros(shape)
    up_d = np.zeros(shape)
    sl = [slice(None)] * a.ndim
    sl[axis] = slice(0, None, 2)
    up_a[tuple(sl)] = a
    up_d[tuple(sl)] = d
    out = np.zeros(shape)
    for k in range(len(lo)):
        out += lo[k] * np.roll(up_a, k, axis=axis)
        out += hi[k] * np.roll(up_d, k, axis=axis)
    return out


def _pad_to_even(channel: np.ndarray) -> np.ndarray:
    h, w = channel.shape
    return np.pad(channel, ((0, h % 2), (0, w % 2)), mode="edge")


def dwt2_single_level(channel: np.ndarray, family: str = "haar") -> SubbandSet:
    """Separable single-level 2D decomposition with orthonormal analysis
    filters and periodic boundary extension.

    Odd dimensions are edge-padded to even first; every subband is
    ceil(H/2) x ceil(W/2).
    """
    channel = np.asarray(channel, dtype=np.float64)
    if channel.ndim != 2 or min(channel.shape) < 2:
        raise TransformSpecError(
            f"dwt2 needs a grid of at least 2x2, got shape {channel.shape}")
    lo, hi = _wavelet_filters(family)
    x = _pad_to_even(channel)
    low_x = _analyze_axis(x, lo, axis=1)
    high_x = _analyze_axis(x, hi, axis=1)
    return SubbandSet(
        ll=_analyze_axis(low_x, lo, axis=0),
        lh=_analyze_axis(high_x, lo, axis=0),
        hl=_analyze_axis(low_x, hi, axis=0),
        hh=_analyze_axis(high_x, hi, axis=0),
    )


def idwt2_single_level(sub: SubbandSet, family: str = "haar") -> np.ndarray:
    """Exact inverse of `dwt2_single_level` for even-dimension inputs."""
    lo, hi = _wavelet_filters(family)
    low_x = _synthesize_axis(sub.ll, sub.hl, lo, hi, axis=0)
    high_x = _synthesize_axis(sub.lh, sub.hh, lo, hi, axis=0)
    return _synthesize_axis(low_x, high_x, lo, hi, axis=1)


def wavelet_mosaic_image(img: np.ndarray, family: str = "haar",
                         output: str = "mosaic") -> np.ndarray:
    """Render a single-level decomposition as one image per channel.

    `mosaic` tiles [LL | LH; HL | HH] with each subband independently
    min-max normalized; `approx` keeps only LL, normalized and upsampled
    back by nearest neighbor.
    """
    validate_image(img)
    chans = []
    for c in range(img.shape[2]):
        sub = dwt2_single_level(img[:, :, c], family)
        if output == "mosaic":
            chans.append(np.block([
                [_minmax01(sub.ll), _minmax01(sub.lh)],
                [_minmax01(sub.hl), _minmax01(sub.hh)],
            ]))
        elif output == "approx":
            ll = _minmax01(sub.ll)
            chans.append(np.repeat(np.repeat(ll, 2, axis=0), 2, axis=1))
        else:
            raise TransformSpecError(f"unknown wavelet output {output!r}")
    return np.stack(chans, axis=2)


# ---------------------------------------------------------------------------
# Median filter


def median_filter(img: np.ndarray, window: int = 5) -> np.ndarray:
    """Exact median over a window x window neighborhood per channel,
    with replicate border extension."""
    validate_image(img)
    if window < 3 or window % 2 == 0:
        raise TransformSpecError(
            f"median window must be odd and >= 3, got {window}")
    r = window // 2
    out = np.empty_like(img)
    for c in range(img.shape[2]):
        padded = np.pad(img[:, :, c], r, mode="edge")
        win = sliding_window_view(padded, (window, window))
        out[:, :, c] = np.median(win, axis=(2, 3))
    return out


# ---------------------------------------------------------------------------
# Application


def apply_transform(spec: TransformSpec, img: np.ndarray) -> np.ndarray:
    """Apply one transform description to an image. Compositions run
    left to right; Identity returns the input unchanged."""
    validate_spec(spec)
    validate_image(img)
    if isinstance(spec, Identity):
        return img
    if isinstance(spec, Fourier):
        return fourier_log_magnitude_image(img)
    if isinstance(spec, Wavelet):
        return wavelet_mosaic_image(img, spec.family, spec.output)
    if isinstance(spec, Median):
        return median_filter(img, spec.window)
    out = img
    for step in spec.steps:
        out = apply_transform(step, out)
    return out
