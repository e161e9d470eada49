"""Non-overlapping raster-order tiling of image/label pairs."""

from typing import List, Sequence, Tuple

import numpy as np

from fre_seg.errors import ShapeError
from fre_seg.models import Sample

Tile = Tuple[np.ndarray, np.ndarray]


def crop_tiles(image: np.ndarray, label: np.ndarray, tile: int) -> List[Tile]:
    """
    Cut an image (C, H, W) or (H, W) and its (H, W) label map into tile x tile pieces.

    Tiles are returned row by row, left to right; a 1024 x 1024 image with
    tile 256 yields 16 tiles.
    """
    height, width = label.shape
    if image.shape[-2:] != label.shape:
        raise ShapeError("crop_tiles", "size", f"image {image.shape} does not match label {label.shape}")
    if tile < 1 or height % tile or width % tile:
        raise ShapeError("crop_tiles", "tile", f"{height}x{width} is not divisible by tile {tile}")
    tiles = []
    for top in range(0, height, tile):
        for left in range(0, width, tile):
            tiles.append((
                image[..., top:top + tile, left:left + tile].copy(),
                label[top:top + tile, left:left + tile].copy(),
            ))
    return tiles


def stitch_tiles(tiles: Sequence[Tile], rows: int, cols: int) -> Tile:
    """Inverse of crop_tiles for a rows x cols grid."""
    if len(tiles) != rows * cols:
        raise ShapeError("stitch_tiles", "count", f"expected {rows * cols} tiles, got {len(tiles)}")
    image_rows = [np.concatenate([t[0] for t in tiles[r * cols:(r + 1) * cols]], axis=-1) for r in range(rows)]
    label_rows = [np.concatenate([t[1] for t in tiles[r * cols:(r + 1) * cols]], axis=-1) for r in range(rows)]
    return np.concatenate(image_rows, axis=-2), np.concatenate(label_rows, axis=-2)


def tile_samples(samples: Sequence[Sample], tile: int) -> List[Sample]:
    """Replace every sample by its tiles, named <stem>_t<k>."""
    out = []
    for sample in samples:
        for k, (image, label) in enumerate(crop_tiles(sample.image, sample.label, tile)):
            out.append(Sample(stem=f"{sample.stem}_t{k:02d}", image=image, label=label))
    return out
