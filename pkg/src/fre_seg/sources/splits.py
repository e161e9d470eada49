"""Deterministic train/val/test assignment by manifest or by stem hash."""

import hashlib
from pathlib import Path
from typing import Dict, Iterable, Mapping, Optional, Sequence, Tuple, Union

from fre_seg.errors import DatasetError
from fre_seg.models import DatasetSplit, Sample

MANIFEST_NAME = "split.manifest"

# 35/5/10 of 50 images
HASH_CUTS: Tuple[float, float] = (0.7, 0.8)


def hash_fraction(stem: str) -> float:
    """Map a stem to [0, 1) through the first 8 bytes of its SHA-1 digest."""
    digest = hashlib.sha1(stem.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / 2 ** 64


def hash_split(stem: str, cuts: Tuple[float, float] = HASH_CUTS) -> str:
    value = hash_fraction(stem)
    if value < cuts[0]:
        return "train"
    if value < cuts[1]:
        return "val"
    return "test"


def proportional_split(stems: Sequence[str], ratios: Tuple[int, int, int] = (35, 5, 10)) -> Dict[str, str]:
    """Assign sorted stems to splits in exact proportion (e.g. 50 stems -> 35/5/10)."""
    total = sum(ratios)
    n = len(stems)
    n_train = round(n * ratios[0] / total)
    n_val = round(n * ratios[1] / total)
    assignment = {}
    for i, stem in enumerate(sorted(stems)):
        assignment[stem] = "train" if i < n_train else "val" if i < n_train + n_val else "test"
    return assignment


def parse_manifest(text: str, source: Union[str, Path] = MANIFEST_NAME) -> Dict[str, str]:
    """
    Parse `<stem> <split>` lines.

    Blank lines and anything after `#` are ignored. A stem listed twice is an
    error even when both lines name the same split.
    """
    assignment: Dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2 or parts[1] not in DatasetSplit.SPLITS:
            raise DatasetError(f"malformed manifest line {number}: {raw!r}", path=str(source))
        stem, split = parts
        if stem in assignment:
            raise DatasetError(f"stem {stem!r} listed twice in manifest", path=str(source))
        assignment[stem] = split
    return assignment


def format_manifest(assignment: Mapping[str, str]) -> str:
    lines = ["# <stem> <split>"]
    for split in DatasetSplit.SPLITS:
        lines.extend(f"{stem} {split}" for stem in sorted(assignment) if assignment[stem] == split)
    return "\n".join(lines) + "\n"


def split_samples(samples: Iterable[Sample], assignment: Optional[Mapping[str, str]] = None) -> DatasetSplit:
    """Partition samples by `assignment`, or by the stem hash when there is none."""
    splits = DatasetSplit()
    for sample in sorted(samples, key=lambda s: s.stem):
        if assignment is None:
            name = hash_split(sample.stem)
        elif sample.stem in assignment:
            name = assignment[sample.stem]
        else:
            raise DatasetError(f"stem {sample.stem!r} is not listed in the manifest")
        splits.get(name).append(sample)
    splits.validate()
    return splits
