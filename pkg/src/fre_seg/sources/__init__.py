"""Dataset sources: the synthetic generator and PNG directories on disk."""

from .local_png import LocalPNGSource, load_dataset, save_dataset
from .splits import hash_split, parse_manifest, proportional_split, split_samples
from .synthetic import SyntheticSource, generate
from .tiles import crop_tiles, stitch_tiles, tile_samples

__all__ = [
    "LocalPNGSource",
    "SyntheticSource",
    "crop_tiles",
    "generate",
    "hash_split",
    "load_dataset",
    "parse_manifest",
    "proportional_split",
    "save_dataset",
    "split_samples",
    "stitch_tiles",
    "tile_samples",
]
