"""Deterministic paired two-domain datasets.

Domain 1 plays the labelled source ("optical-like"), domain 0 the target
("SAR-like"). Every scene is rendered from its own seed derived from
``(seed, split, index)`` so datasets are reproducible bit for bit and
splits never share scenes.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import RejectedInput

BACKGROUND, RECT, DISK = 0, 1, 2
N_CLASSES = 3

# Mean intensity per class (background, rect, disk). Both domains order the
# classes the same way (disk < background < rect) so no class pair swaps
# along a linear path, while the SAR levels still fall on the wrong side
# of the optical decision boundaries.
OPTICAL_LEVELS = np.array([0.50, 0.95, 0.05])
OPTICAL_NOISE = 0.03
SAR_LEVELS = np.array([0.10, 0.50, 0.02])
SAR_FLOOR_MAX = 0.4

# shapes snap to a lattice of this pitch (pixels)
CELL = 4
DISK_RADII = (2.5, 3.6)

SPLITS = {"train": 0, "val": 1, "test": 2}
MAX_PLACEMENT_TRIES = 50


@dataclass
class DomainPairDataset:
    x0: np.ndarray
    x1: np.ndarray
    y0: np.ndarray
    y1: np.ndarray
    modality: str
    alignment: str
    weak_p: float
    seed: int
    params: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.x0)

    @property
    def agreement_rate(self):
        """Fraction of label entries equal across the two domains."""
        if len(self) == 0:
            return 1.0
        return float(np.mean(self.y0 == self.y1))

    def manifest(self):
        return {
            "modality": self.modality,
            "alignment": self.alignment,
            "weak_p": self.weak_p,
            "seed": self.seed,
            "n": len(self),
            "dim": int(self.x0.shape[1]) if self.x0.ndim == 2 else 0,
            "params": dict(self.params),
            "agreement_rate": self.agreement_rate,
        }


def split_seed(seed, split):
    return [int(seed), SPLITS[split]]


# -- points ---------------------------------------------------------------

def _moons(n, rng):
    n_a = (n + 1) // 2
    n_b = n - n_a
    theta_a = rng.uniform(0.0, np.pi, n_a)
    theta_b = rng.uniform(0.0, np.pi, n_b)
    a = np.stack([np.cos(theta_a), np.sin(theta_a)], axis=1)
    b = np.stack([1.0 - np.cos(theta_b), 0.5 - np.sin(theta_b)], axis=1)
    pts = np.concatenate([a, b])
    labels = np.concatenate([np.zeros(n_a), np.ones(n_b)])
    order = rng.permutation(n)
    return pts[order], labels[order]


def points_affine(x):
    """The fixed map taking domain-1 points to domain-0 points (before noise)."""
    angle = np.deg2rad(30.0)
    rot = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    return 1.4 * x @ rot.T + np.array([0.5, -0.3])


def gen_points_pair(n, seed=0, noise_sigma=0.05, split="train"):
    if n <= 0:
        raise RejectedInput(f"n must be positive, got {n}")
    rng = np.random.default_rng(split_seed(seed, split))
    x1, labels = _moons(n, rng)
    x1 = x1 + rng.normal(0.0, 0.1, x1.shape)
    x0 = points_affine(x1)
    if noise_sigma > 0:
        x0 = x0 + rng.normal(0.0, noise_sigma, x0.shape)
    y = labels[:, None].copy()
    return DomainPairDataset(
        x0=x0, x1=x1, y0=y, y1=y.copy(), modality="points", alignment="strong",
        weak_p=0.0, seed=int(seed),
        params={"noise_sigma": float(noise_sigma), "split": split},
    )


# -- shapes ---------------------------------------------------------------

def _shape_mask(rng, side):
    """Draw one lattice-aligned rect or disk; returns (class, boolean mask).

    Rect sides are one or two cells; disks are centred on interior lattice
    nodes.
    """
    yy, xx = np.mgrid[0:side, 0:side]
    cells = side // CELL
    if rng.random() < 0.5:
        h, w = rng.integers(1, 3, size=2)
        r0 = CELL * rng.integers(0, cells - h + 1)
        c0 = CELL * rng.integers(0, cells - w + 1)
        h, w = CELL * h, CELL * w
        return RECT, (yy >= r0) & (yy < r0 + h) & (xx >= c0) & (xx < c0 + w)
    radius = DISK_RADII[rng.integers(len(DISK_RADII))]
    cy, cx = CELL * rng.integers(1, cells, size=2)
    return DISK, (yy + 0.5 - cy) ** 2 + (xx + 0.5 - cx) ** 2 <= radius**2


def _place(rng, side, occupied):
    """Try to place a shape clear of ``occupied`` (with a one-pixel gap)."""
    pad = _dilate(occupied)
    for _ in range(MAX_PLACEMENT_TRIES):
        cls, m = _shape_mask(rng, side)
        if m.any() and not (m & pad).any():
            return cls, m
    return None


def _dilate(mask):
    out = mask.copy()
    out[1:] |= mask[:-1]
    out[:-1] |= mask[1:]
    out[:, 1:] |= mask[:, :-1]
    out[:, :-1] |= mask[:, 1:]
    return out


def _compose(shapes, side):
    labels = np.zeros((side, side), dtype=np.int64)
    for cls, m in shapes:
        labels[m] = cls
    return labels


def _scene(seed, side, weak_p):
    """Return (labels0, labels1) for one scene, regenerating on placement failure."""
    attempt = 0
    while True:
        rng = np.random.default_rng([*seed, attempt])
        shapes = []
        occupied = np.zeros((side, side), dtype=bool)
        ok = True
        for _ in range(rng.integers(1, 4)):
            placed = _place(rng, side, occupied)
            if placed is None:
                ok = False
                break
            shapes.append(placed)
            occupied |= placed[1]
        if ok:
            break
        attempt += 1

    shapes0 = list(shapes)
    if rng.random() < weak_p:
        add = len(shapes) == 1 or (len(shapes) < 3 and rng.random() < 0.5)
        placed = _place(rng, side, occupied) if add else None
        if placed is not None:
            shapes0.append(placed)
        else:
            shapes0.pop(int(rng.integers(len(shapes0))))
    return _compose(shapes0, side), _compose(shapes, side), rng


def render_optical(labels, rng):
    img = OPTICAL_LEVELS[labels]
    return img + rng.normal(0.0, OPTICAL_NOISE, img.shape)


def render_sar(labels, rng):
    """Speckled class backscatter over a smooth per-scene brightness floor.

    The floor is an offset with a random planar tilt; it carries no
    semantics but dominates pixel-wise distances between scenes.
    """
    side = labels.shape[0]
    img = SAR_LEVELS[labels] * speckle(rng, labels.shape)
    g = (np.arange(side) + 0.5) / side * 2.0 - 1.0
    level = rng.uniform(0.0, SAR_FLOOR_MAX)
    tilt_x, tilt_y = rng.uniform(-0.5, 0.5, size=2)
    return img + level * (1.0 + tilt_x * g[None, :] + tilt_y * g[:, None])


def speckle(rng, shape):
    """Multiplicative speckle factors: exponential with unit mean."""
    return rng.exponential(1.0, shape)


def gen_shapes_pair(n, side=16, seed=0, weak_p=0.0, split="train"):
    if n <= 0:
        raise RejectedInput(f"n must be positive, got {n}")
    if side < 16:
        raise RejectedInput(f"side must be >= 16, got {side}")
    if not 0.0 <= weak_p <= 1.0:
        raise RejectedInput(f"weak_p must lie in [0, 1], got {weak_p}")
    base = split_seed(seed, split)
    d = side * side
    x0 = np.empty((n, d))
    x1 = np.empty((n, d))
    y0 = np.empty((n, d))
    y1 = np.empty((n, d))
    for i in range(n):
        lab0, lab1, rng = _scene([*base, i], side, weak_p)
        x1[i] = render_optical(lab1, rng).ravel()
        x0[i] = render_sar(lab0, rng).ravel()
        y0[i] = lab0.ravel()
        y1[i] = lab1.ravel()
    return DomainPairDataset(
        x0=x0, x1=x1, y0=y0, y1=y1, modality="shapes",
        alignment="strong" if weak_p == 0 else "weak",
        weak_p=float(weak_p), seed=int(seed),
        params={"side": int(side), "split": split},
    )


def generate(modality, n, seed=0, split="train", side=16, weak_p=0.0, noise_sigma=0.05):
    if modality == "shapes":
        return gen_shapes_pair(n, side=side, seed=seed, weak_p=weak_p, split=split)
    if modality == "points":
        return gen_points_pair(n, seed=seed, noise_sigma=noise_sigma, split=split)
    raise RejectedInput(f"unknown modality {modality!r}")
