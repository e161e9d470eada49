"""Dataset directory of PNG images and label maps."""

import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Union

import numpy as np
from PIL import Image

from fre_seg.errors import DatasetError, LabelError
from fre_seg.models import DatasetSplit, Sample
from fre_seg.sources.splits import MANIFEST_NAME, format_manifest, parse_manifest, split_samples

logger = logging.getLogger(__name__)

IMAGES_DIR = "images"
LABELS_DIR = "labels"

# Max representable value per Pillow mode; images are divided by it
_IMAGE_SCALE: Dict[str, float] = {
    "L": 255.0,
    "RGB": 255.0,
    "I;16": 65535.0,
    "I;16B": 65535.0,
    "I;16L": 65535.0,
    "I": 65535.0,
}


class LocalPNGSource:
    """
    Load a dataset laid out as::

        <dir>/images/<stem>.png   8/16-bit gray or 8-bit RGB
        <dir>/labels/<stem>.png   8-bit gray or paletted, pixel value == class id
        <dir>/split.manifest      optional `<stem> <split>` lines
    """

    def __init__(self, directory: Union[str, Path], classes: int):
        self.directory = Path(directory)
        self.classes = classes
        if not self.directory.is_dir():
            raise DatasetError(f"dataset directory not found: {directory}", path=str(directory))

    def load(self) -> DatasetSplit:
        image_dir = self.directory / IMAGES_DIR
        paths = sorted(image_dir.glob("*.png")) if image_dir.is_dir() else []
        if not paths:
            raise DatasetError(f"no images in {image_dir}: the dataset is empty", path=str(image_dir))

        samples = [self._load_pair(path) for path in paths]
        manifest = self.directory / MANIFEST_NAME
        assignment = None
        if manifest.exists():
            assignment = parse_manifest(manifest.read_text(encoding="utf-8"), manifest)
            missing = sorted(set(assignment) - {s.stem for s in samples})
            if missing:
                raise DatasetError(f"manifest lists stems without images: {missing}", path=str(manifest))
        splits = split_samples(samples, assignment)
        logger.info("loaded %s: %s", self.directory, splits.sizes())
        return splits

    def _load_pair(self, image_path: Path) -> Sample:
        stem = image_path.stem
        label_path = self.directory / LABELS_DIR / f"{stem}.png"
        if not label_path.exists():
            raise DatasetError(f"missing label for {stem}", path=str(label_path))
        image = read_image(image_path)
        label = read_label(label_path, self.classes)
        if image.shape[-2:] != label.shape:
            raise DatasetError(
                f"image {image.shape[-2:]} and label {label.shape} sizes differ for {stem}", path=str(image_path)
            )
        return Sample(stem=stem, image=image, label=label)


def read_image(path: Path) -> np.ndarray:
    """(C, H, W) float32 in [0, 1]."""
    with Image.open(path) as img:
        mode = img.mode
        if mode not in _IMAGE_SCALE:
            raise DatasetError(f"unsupported image mode {mode}", path=str(path), value=mode)
        data = np.asarray(img).astype(np.float32) / _IMAGE_SCALE[mode]
    if data.ndim == 2:
        data = data[None]
    else:
        data = np.moveaxis(data, -1, 0)
    return np.ascontiguousarray(data, dtype=np.float32)


def read_label(path: Path, classes: int) -> np.ndarray:
    with Image.open(path) as img:
        if img.mode not in ("L", "P"):
            raise DatasetError(f"label maps must be 8-bit gray or paletted, got {img.mode}", path=str(path))
        label = np.asarray(img).astype(np.int64)
    if label.size and label.max() >= classes:
        value = int(label.max())
        raise LabelError(f"label value {value} in {path} outside [0, {classes})", path=str(path), value=value)
    return label


def write_image(image: np.ndarray, path: Path) -> None:
    """Gray images go to 16-bit PNG, three-channel images to 8-bit RGB."""
    data = np.clip(image, 0.0, 1.0)
    if data.shape[0] == 1:
        Image.fromarray(np.round(data[0] * 65535).astype(np.uint16)).save(path)
    elif data.shape[0] == 3:
        Image.fromarray(np.round(np.moveaxis(data, 0, -1) * 255).astype(np.uint8)).save(path)
    else:
        raise DatasetError(f"cannot write a {data.shape[0]}-channel image", path=str(path))


def save_dataset(
    samples: Union[DatasetSplit, Iterable[Sample]],
    directory: Union[str, Path],
) -> Path:
    """
    Write samples in the layout LocalPNGSource reads.

    A DatasetSplit also writes split.manifest so the split survives the round trip.
    """
    directory = Path(directory)
    (directory / IMAGES_DIR).mkdir(parents=True, exist_ok=True)
    (directory / LABELS_DIR).mkdir(parents=True, exist_ok=True)

    assignment: Optional[Dict[str, str]] = None
    items: List[Sample]
    if isinstance(samples, DatasetSplit):
        assignment = {s.stem: name for name in DatasetSplit.SPLITS for s in samples.get(name)}
        items = [s for name in DatasetSplit.SPLITS for s in samples.get(name)]
    else:
        items = list(samples)

    for sample in items:
        write_image(sample.image, directory / IMAGES_DIR / f"{sample.stem}.png")
        Image.fromarray(sample.label.astype(np.uint8)).save(directory / LABELS_DIR / f"{sample.stem}.png")
    if assignment is not None:
        (directory / MANIFEST_NAME).write_text(format_manifest(assignment), encoding="utf-8")
    logger.info("wrote %d samples to %s", len(items), directory)
    return directory


def load_dataset(directory: Union[str, Path], classes: int) -> DatasetSplit:
    return LocalPNGSource(directory, classes).load()
