"""Random projection matrices with E[P P^T] = I.

The orthogonal families (``haar`` and ``coordinate``) additionally satisfy
P^T P = (d/ell) I exactly for every draw; the ``gaussian`` family satisfies
both identities only in expectation.

Randomness is addressed rather than consumed: consumers derive a
:class:`RngStream` from a ``(seed, outer, inner)`` triple and the same triple
always yields the same matrix, independent of what was drawn elsewhere.
Channel conventions used across the package:

* outer 0: per-iteration sketches, inner = global step index,
* outer 1: epoch-level draws (anchor selection), inner = epoch index,
* outer 2: initial-point sampling in experiments,
* outer 3: synthetic problem instances built by the CLI.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigurationError

SKETCH_CHANNEL = 0
EPOCH_CHANNEL = 1
X0_CHANNEL = 2
PROBLEM_CHANNEL = 3

DISTRIBUTIONS = ("haar", "coordinate", "gaussian")


@dataclass(frozen=True)
class RngStream:
    """Counter-addressed source of reproducible generators."""

    seed: int
    outer: int = 0
    inner: int = 0

    def at(self, outer: Optional[int] = None, inner: Optional[int] = None) -> "RngStream":
        return RngStream(
            self.seed,
            self.outer if outer is None else outer,
            self.inner if inner is None else inner,
        )

    def generator(self) -> np.random.Generator:
        # Philox is counter-based, so streams at distinct (outer, inner)
        # addresses are independent regardless of draw order elsewhere.
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.outer, self.inner))
        return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class Sketch:
    """A d x ell projection matrix tagged with the family that drew it."""

    matrix: np.ndarray
    d: int
    ell: int
    distribution: str

    def apply(self, w) -> np.ndarray:
        """P @ w for an ell-vector w."""
        w = np.asarray(w, dtype=float)
        if w.shape != (self.ell,):
            raise ConfigurationError(
                f"apply expects shape ({self.ell},), got {w.shape}"
            )
        return self.matrix @ w

    def apply_transpose(self, v) -> np.ndarray:
        """P^T @ v for a d-vector v."""
        v = np.asarray(v, dtype=float)
        if v.shape != (self.d,):
            raise ConfigurationError(
                f"apply_transpose expects shape ({self.d},), got {v.shape}"
            )
        return self.matrix.T @ v


def _check_dims(d: int, ell: int) -> None:
    if d < 1:
        raise ConfigurationError(f"dimension must be positive, got {d}")
    if not 1 <= ell <= d:
        raise ConfigurationError(f"need 1 <= ell <= d, got ell={ell}, d={d}")


def orthonormal_signed(x: np.ndarray):
    """Thin QR of ``x`` (stacked inputs fine) with a fixed sign convention.

    Columns are flipped so the diagonal of R is nonnegative, removing the
    sign ambiguity LAPACK leaves in Q; a zero pivot keeps the +1 sign.
    With Gaussian input the result is uniform over orthonormal ell-frames.
    Returns the frame and the (pre-flip) R diagonal for degeneracy checks.
    """
    q, r = np.linalg.qr(x)
    diag = np.diagonal(r, axis1=-2, axis2=-1)
    flip = np.where(diag < 0, -1.0, 1.0)
    return q * flip[..., None, :], diag


def draw_haar(d: int, ell: int, rng: RngStream) -> Sketch:
    """Uniformly random orthonormal ell-frame, scaled by sqrt(d/ell)."""
    _check_dims(d, ell)
    gen = rng.generator()
    while True:
        q, diag = orthonormal_signed(gen.standard_normal((d, ell)))
        # A zero pivot means a degenerate Gaussian fill (probability zero).
        if np.all(diag != 0.0):
            break
    return Sketch(np.sqrt(d / ell) * q, d, ell, "haar")


def sample_haar(d: int, ell: int, size: int, gen: np.random.Generator) -> np.ndarray:
    """``size`` scaled Haar frames as one (size, d, ell) array.

    Vectorized counterpart of :func:`draw_haar` for Monte-Carlo diagnostics;
    both paths share :func:`orthonormal_signed`, so they apply the identical
    map to the Gaussian fill.
    """
    _check_dims(d, ell)
    q, diag = orthonormal_signed(gen.standard_normal((size, d, ell)))
    bad = np.any(diag == 0.0, axis=-1)
    while np.any(bad):
        fresh, fresh_diag = orthonormal_signed(
            gen.standard_normal((int(bad.sum()), d, ell))
        )
        q[bad] = fresh
        diag = diag.copy()
        diag[bad] = fresh_diag
        bad = np.any(diag == 0.0, axis=-1)
    return np.sqrt(d / ell) * q


def coordinate_indices(d: int, ell: int, gen: np.random.Generator) -> np.ndarray:
    """ell distinct coordinates drawn without replacement."""
    return gen.choice(d, size=ell, replace=False)


def draw_coordinate_block(d: int, ell: int, rng: RngStream) -> Sketch:
    """Columns sqrt(d/ell) e_i at ell distinct random coordinates."""
    _check_dims(d, ell)
    idx = coordinate_indices(d, ell, rng.generator())
    m = np.zeros((d, ell))
    m[idx, np.arange(ell)] = np.sqrt(d / ell)
    return Sketch(m, d, ell, "coordinate")


def draw_gaussian(d: int, ell: int, rng: RngStream) -> Sketch:
    """iid N(0, 1/ell) entries; unbiased but not orthogonal per draw."""
    _check_dims(d, ell)
    m = rng.generator().standard_normal((d, ell)) / np.sqrt(ell)
    return Sketch(m, d, ell, "gaussian")


def sample_gaussian(d: int, ell: int, size: int, gen: np.random.Generator) -> np.ndarray:
    """``size`` Gaussian sketches as one (size, d, ell) array."""
    _check_dims(d, ell)
    return gen.standard_normal((size, d, ell)) / np.sqrt(ell)


_DRAWERS = {
    "haar": draw_haar,
    "coordinate": draw_coordinate_block,
    "gaussian": draw_gaussian,
}


def draw(distribution: str, d: int, ell: int, rng: RngStream) -> Sketch:
    """Dispatch to the named family."""
    try:
        drawer = _DRAWERS[distribution]
    except KeyError:
        raise ConfigurationError(
            f"unknown sketch distribution {distribution!r}; expected one of {DISTRIBUTIONS}"
        ) from None
    return drawer(d, ell, rng)
