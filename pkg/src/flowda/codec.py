"""Linear latent codec: a PCA encoder with a refittable affine decoder."""

import logging
from dataclasses import dataclass, replace

import numpy as np

from .errors import RejectedInput

log = logging.getLogger(__name__)

RIDGE = 1e-6


@dataclass(frozen=True)
class Codec:
    """``encode(x) = components @ (x - mean)``; ``decode(z) = decoder @ z + offset``.

    ``offset`` starts equal to ``mean`` and only moves under
    :func:`refit_decoder`.
    """

    kind: str
    components: np.ndarray  # (latent_dim, input_dim)
    mean: np.ndarray
    decoder: np.ndarray  # (input_dim, latent_dim)
    offset: np.ndarray

    @property
    def latent_dim(self):
        return self.components.shape[0]

    @property
    def input_dim(self):
        return self.components.shape[1]


def identity_codec(dim):
    eye = np.eye(dim)
    zero = np.zeros(dim)
    return Codec("identity", eye, zero, eye.copy(), zero.copy())


def fit_pca(data, latent_dim):
    """Principal basis of ``data`` (rows are samples) of width ``latent_dim``."""
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2:
        raise RejectedInput(f"expected a 2-D array of samples, got shape {x.shape}")
    n, d = x.shape
    if not 0 < latent_dim <= d:
        raise RejectedInput(f"latent_dim must be in [1, {d}], got {latent_dim}")
    if n <= latent_dim:
        raise RejectedInput(f"need more than latent_dim={latent_dim} samples, got {n}")
    mean = x.mean(axis=0)
    xc = x - mean
    if not np.any(xc):
        raise RejectedInput("data has zero variance; no principal directions exist")
    _, s, vt = np.linalg.svd(xc, full_matrices=False)
    comps = vt[:latent_dim]
    # fix sign so the largest-magnitude coordinate of each component is positive
    pivot = np.argmax(np.abs(comps), axis=1)
    comps = comps * np.sign(comps[np.arange(latent_dim), pivot])[:, None]
    log.debug("pca kept %.4f of variance", (s[:latent_dim] ** 2).sum() / (s**2).sum())
    return Codec("pca", comps, mean, comps.T.copy(), mean.copy())


def _check(x, dim, what):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != dim:
        raise RejectedInput(f"{what} has dim {x.shape[-1]}, codec expects {dim}")
    return x


def encode(codec, x):
    x = _check(x, codec.input_dim, "input")
    if codec.kind == "identity":
        return x.copy()
    return (x - codec.mean) @ codec.components.T


def decode(codec, z):
    z = _check(z, codec.latent_dim, "latent")
    if codec.kind == "identity":
        return z.copy()
    return z @ codec.decoder.T + codec.offset


def reconstruction_rmse(codec, data):
    x = np.asarray(data, dtype=np.float64)
    return float(np.sqrt(np.mean((decode(codec, encode(codec, x)) - x) ** 2)))


def refit_decoder(codec, target_data):
    """Least-squares refit of the decoder and its offset on ``target_data``.

    The encoder (components and mean) is left untouched. Identity codecs
    are returned as is.
    """
    if codec.kind == "identity":
        return codec
    x = np.asarray(target_data, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise RejectedInput("refit_decoder needs a non-empty 2-D array of samples")
    x = _check(x, codec.input_dim, "target data")
    z = encode(codec, x)
    design = np.hstack([z, np.ones((len(z), 1))])
    gram = design.T @ design
    rhs = design.T @ x
    if np.linalg.matrix_rank(gram) < gram.shape[0]:
        log.warning("decoder refit: rank-deficient normal equations, adding ridge %g", RIDGE)
        gram = gram + RIDGE * np.eye(gram.shape[0])
        coef = np.linalg.solve(gram, rhs)
    else:
        coef = np.linalg.lstsq(design, x, rcond=None)[0]
    return replace(codec, decoder=coef[:-1].T.copy(), offset=coef[-1].copy())
