"""Shared fixtures: tiny network configs and a small synthetic dataset."""

from dataclasses import replace

import pytest

from fre_seg.models import FREConfig, FREMode, ModelConfig, ModelVariant, SupervisionConfig, SyntheticSpec
from fre_seg.sources import generate, proportional_split, split_samples


def make_config(variant: ModelVariant = ModelVariant.BASELINE, **changes) -> ModelConfig:
    """Depth-2 U-Net with base width 2: 16x16 inputs, 8-channel bottleneck."""
    settings = dict(input_channels=1, classes=3, base_width=2, depth=2, se_reduction=2, variant=variant)
    if variant is ModelVariant.FRE:
        settings["fre"] = FREConfig(B=4, X=2.0, mode=FREMode.RANDOM, seed=3)
    elif variant is ModelVariant.DROPOUT:
        settings["dropout_rate"] = 0.25
    elif variant is ModelVariant.SUPERVISION:
        settings["supervision"] = SupervisionConfig(lam=0.3)
    settings.update(changes)
    return ModelConfig(**settings)


@pytest.fixture
def tiny_config():
    """Factory for tiny model configs of any variant."""
    return make_config


@pytest.fixture
def tiny_spec():
    return SyntheticSpec(image_size=16, cells=(1, 2), radius=(0.18, 0.25), membrane_width=1, blur=0.5,
                         noise=0.02, seed=11)


@pytest.fixture
def tiny_splits(tiny_spec):
    """Eight synthetic 16px images split 4/2/2."""
    samples = generate(tiny_spec, 8)
    return split_samples(samples, proportional_split([s.stem for s in samples], (4, 2, 2)))


@pytest.fixture
def four_class_spec(tiny_spec):
    return replace(tiny_spec, class_scheme="four_class", image_size=32, radius=(0.2, 0.28))
