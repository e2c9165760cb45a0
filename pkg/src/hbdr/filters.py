"""Kernel banks used to initialize the first convolution layer."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import rand_normal


@dataclass(frozen=True)
class GaborSpec:
    """Gabor bank layout: ``orientations`` angles spread over [0, pi) times
    every wavelength (pixels per cycle). The envelope width follows the
    wavelength, ``sigma = sigma_ratio * wavelength``."""

    size: int = 5
    orientations: int = 8
    wavelengths: tuple[float, ...] = (2.0, 3.0, 4.0, 5.0)
    phase: float = 0.0
    aspect: float = 0.5
    sigma_ratio: float = 0.56

    def __post_init__(self):
        if self.size < 1 or self.size % 2 == 0:
            raise ValueError(f"filter size must be odd and positive, got {self.size}")
        if self.orientations < 1:
            raise ValueError("need at least one orientation")
        if not self.wavelengths or min(self.wavelengths) < 2:
            raise ValueError("wavelengths must be >= 2 pixels")
        if self.sigma_ratio <= 0:
            raise ValueError("sigma_ratio must be positive")


def gabor_kernel(size: int, theta: float, wavelength: float, phase: float = 0.0,
                 aspect: float = 0.5, sigma: float | None = None) -> np.ndarray:
    """Real Gabor filter sampled on the centered integer grid (x = column,
    y = row, both in ``[-size//2, size//2]``)."""
    if sigma is None:
        sigma = 0.56 * wavelength
    r = size // 2
    y, x = np.mgrid[-r:r + 1, -r:r + 1].astype(np.float64)
    xr = x * np.cos(theta) + y * np.sin(theta)
    yr = -x * np.sin(theta) + y * np.cos(theta)
    envelope = np.exp(-(xr ** 2 + aspect ** 2 * yr ** 2) / (2.0 * sigma ** 2))
    return envelope * np.cos(2.0 * np.pi * xr / wavelength + phase)


def gabor_bank(count: int = 32, size: int | None = None, spec: GaborSpec | None = None,
               normalize: bool = True) -> np.ndarray:
    """Bank of ``count`` Gabor filters, shape ``[count, 1, size, size]``.

    Filters are ordered orientation-major: entry ``t * len(wavelengths) + l``
    has angle ``t * pi / n_orientations`` and the ``l``-th wavelength. When
    ``count`` differs from what ``spec`` lays out the number of orientations is
    derived from it, which requires ``count`` to be a multiple of the number
    of wavelengths.
    """
    spec = spec or GaborSpec()
    size = spec.size if size is None else size
    n_lam = len(spec.wavelengths)
    if count < 1 or count % n_lam:
        raise ValueError(f"bank size {count} is not a multiple of {n_lam} wavelengths")
    n_theta = count // n_lam
    bank = np.empty((count, 1, size, size), dtype=np.float64)
    for t in range(n_theta):
        theta = t * np.pi / n_theta
        for l, lam in enumerate(spec.wavelengths):
            g = gabor_kernel(size, theta, lam, spec.phase, spec.aspect, spec.sigma_ratio * lam)
            if normalize:
                g = g - g.mean()
                norm = np.linalg.norm(g)
                if norm > 0:
                    g = g / norm
            bank[t * n_lam + l, 0] = g
    return bank


def gaussian_bank(count: int, size: int, std: float, rng: np.random.Generator) -> np.ndarray:
    """Bank of i.i.d. N(0, std^2) filters, shape ``[count, 1, size, size]``."""
    if std <= 0:
        raise ValueError(f"std must be positive, got {std}")
    return rand_normal((count, 1, size, size), 0.0, std, rng)
