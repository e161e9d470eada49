"""Synthetic cell images with exact label maps, standing in for the microscope datasets."""

import logging
from typing import Dict, List, Tuple

import numpy as np
from scipy import ndimage

from fre_seg.errors import ConfigError
from fre_seg.models import DatasetSplit, Sample, SyntheticSpec
from fre_seg.sources.splits import proportional_split, split_samples

logger = logging.getLogger(__name__)

# Clean intensity per class before blur and noise
INTENSITY: Dict[str, float] = {
    "background": 0.15,
    "membrane": 0.85,
    "nucleus": 0.5,
    "mitochondria": 0.6,
    "synapse": 1.0,
}

# Mean class pixel fractions of the default SyntheticSpec over 100 images fall in these bands
CLASS_BANDS: Dict[str, Dict[str, Tuple[float, float]]] = {
    "three_class": {
        "background": (0.55, 0.97),
        "membrane": (0.02, 0.30),
        "nucleus": (0.005, 0.20),
    },
    "four_class": {
        "background": (0.55, 0.97),
        "membrane": (0.02, 0.30),
        "mitochondria": (0.002, 0.15),
        "synapse": (0.001, 0.10),
    },
}


def _grid(size: int) -> Tuple[np.ndarray, np.ndarray]:
    return np.mgrid[0:size, 0:size].astype(np.float64)


def _disk(yy: np.ndarray, xx: np.ndarray, cy: float, cx: float, radius: float) -> np.ndarray:
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2


def _cell_mask(yy: np.ndarray, xx: np.ndarray, cy: float, cx: float, radius: float,
               rng: np.random.Generator) -> np.ndarray:
    """Star-convex blob: a circle whose radius wobbles with three low harmonics."""
    amps = rng.uniform(0.0, [0.12, 0.08, 0.05])
    phases = rng.uniform(0.0, 2 * np.pi, 3)
    theta = np.arctan2(yy - cy, xx - cx)
    boundary = radius * (1.0 + sum(a * np.cos(k * theta + p) for k, a, p in zip((1, 2, 3), amps, phases)))
    return np.hypot(yy - cy, xx - cx) <= boundary


def render_sample(spec: SyntheticSpec, index: int) -> Sample:
    """Draw image `index` of the dataset described by `spec`; a pure function of (spec, index)."""
    rng = np.random.default_rng([spec.seed, index])
    size = spec.image_size
    ids = {name: i for i, name in enumerate(spec.class_names)}
    yy, xx = _grid(size)
    label = np.zeros((size, size), dtype=np.uint8)

    for _ in range(int(rng.integers(spec.cells[0], spec.cells[1] + 1))):
        radius = rng.uniform(*spec.radius) * size
        # The wobble reaches at most 1.25 * radius; keep the whole cell in frame
        margin = min(1.25 * radius + 1, size / 2)
        cy, cx = rng.uniform(margin, size - margin, 2)
        cell = _cell_mask(yy, xx, cy, cx, radius, rng)
        interior = ndimage.binary_erosion(cell, iterations=spec.membrane_width)
        membrane = cell & ~interior
        inner = ndimage.binary_erosion(interior, iterations=1)

        label[cell] = ids["background"]
        label[membrane] = ids["membrane"]
        if "nucleus" in ids:
            oy, ox = rng.uniform(-0.2, 0.2, 2) * radius
            nucleus = _disk(yy, xx, cy + oy, cx + ox, rng.uniform(0.4, 0.5) * radius) & inner
            label[nucleus] = ids["nucleus"]
        if "mitochondria" in ids:
            for _ in range(int(rng.integers(2, 4))):
                angle, dist = rng.uniform(0, 2 * np.pi), rng.uniform(0.0, 0.5) * radius
                blob = _disk(yy, xx, cy + dist * np.sin(angle), cx + dist * np.cos(angle), 0.22 * radius)
                label[blob & inner] = ids["mitochondria"]
        if "synapse" in ids:
            ring = np.argwhere(membrane)
            if len(ring):
                sy, sx = ring[rng.integers(len(ring))]
                spot = _disk(yy, xx, sy, sx, spec.membrane_width + 1.0) & cell
                label[spot] = ids["synapse"]

    table = np.array([INTENSITY[name] for name in spec.class_names])
    image = table[label]
    if spec.blur > 0:
        image = ndimage.gaussian_filter(image, sigma=spec.blur)
    if spec.noise > 0:
        image = image + rng.normal(0.0, spec.noise, image.shape)
    image = np.clip(image, 0.0, 1.0).astype(np.float32)
    return Sample(stem=f"synth_{index:05d}", image=image[None], label=label)


def generate(spec: SyntheticSpec, n: int, start: int = 0) -> List[Sample]:
    """Images `start` .. `start + n - 1` of the synthetic dataset."""
    spec.validate()
    if n < 1:
        raise ConfigError("data.n", f"need at least one image, got {n}")
    samples = [render_sample(spec, index) for index in range(start, start + n)]
    logger.debug("generated %d synthetic %s images of %dpx", n, spec.class_scheme, spec.image_size)
    return samples


def class_frequencies(samples: List[Sample], classes: int) -> np.ndarray:
    """Fraction of pixels per class over all samples."""
    counts = sum(np.bincount(s.label.ravel(), minlength=classes) for s in samples)
    return counts / counts.sum()


class SyntheticSource:
    """Synthetic dataset of `n` images split 35/5/10 in stem order."""

    def __init__(self, spec: SyntheticSpec, n: int = 50, ratios: Tuple[int, int, int] = (35, 5, 10)):
        self.spec = spec
        self.n = n
        self.ratios = ratios

    def load(self) -> DatasetSplit:
        samples = generate(self.spec, self.n)
        assignment = proportional_split([s.stem for s in samples], self.ratios)
        splits = split_samples(samples, assignment)
        logger.info("synthetic %s dataset: %s", self.spec.class_scheme, splits.sizes())
        return splits
