"""Named architecture presets.

The four per-trait presets (moon-trust, moon-dom, moon-age, moon-iq) pin the
tuned learning rates, dropout, per-segment filter counts, and FC stacks of
the optimized models; where tuning dropped a segment entirely the preset
omits it, and the FC width applies to each hidden layer. The base
vgg16/vgg19/moon/shallow/basic6 families keep their usual segment structure
with FC stacks downsized for small grayscale inputs; values the family
definitions leave open are documented reconstructions.

moon-mini is a reduced-filter moon-style preset small enough to train on a
CPU in minutes; it is what the synthetic end-to-end checks use.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError
from .model import ArchitectureConfig


@dataclass(frozen=True)
class Preset:
    name: str
    architecture: ArchitectureConfig
    learning_rate: float
    note: str = ""


_BASE_LR = 1e-4

PRESETS: dict[str, Preset] = {
    p.name: p
    for p in [
        Preset(
            "vgg16",
            ArchitectureConfig(
                segments=((2, 64), (2, 128), (3, 256), (3, 512), (3, 512)),
                fc_layers=2, fc_width=512, dropout=0.5,
            ),
            _BASE_LR,
            "16-layer very-deep family; FC stack downsized for small grayscale input",
        ),
        Preset(
            "vgg19",
            ArchitectureConfig(
                segments=((2, 64), (2, 128), (4, 256), (4, 512), (4, 512)),
                fc_layers=2, fc_width=512, dropout=0.5,
            ),
            _BASE_LR,
            "19-layer very-deep family; FC stack downsized for small grayscale input",
        ),
        Preset(
            "moon",
            ArchitectureConfig(
                segments=((2, 64), (2, 64), (2, 128), (3, 256), (3, 256), (3, 256)),
                fc_layers=1, fc_width=2048, dropout=0.5,
            ),
            _BASE_LR,
            "six-segment multi-attribute base; FC width reconstructed",
        ),
        Preset(
            "shallow",
            ArchitectureConfig(
                segments=((1, 32), (1, 64), (1, 128)),
                fc_layers=2, fc_width=256, dropout=0.5,
                hidden_activation="parametric_relu",
            ),
            _BASE_LR,
            "three conv/pool segments, FC dropout, parametric ReLU",
        ),
        Preset(
            "basic6",
            ArchitectureConfig(
                segments=((1, 32), (1, 64), (1, 128), (1, 256)),
                fc_layers=2, fc_width=256, dropout=0.0,
            ),
            _BASE_LR,
            "four single-conv segments, two FC layers, no dropout",
        ),
        Preset(
            "moon-trust",
            ArchitectureConfig(
                segments=((2, 64), (2, 64), (2, 128), (3, 256), (3, 256), (3, 256)),
                fc_layers=1, fc_width=2079, dropout=0.55,
            ),
            10 ** -4.2,
            "tuned trustworthiness model",
        ),
        Preset(
            "moon-dom",
            ArchitectureConfig(
                segments=((2, 32), (2, 64), (3, 256), (3, 512), (3, 512)),
                fc_layers=3, fc_width=2227, dropout=0.31,
            ),
            10 ** -4.4,
            "tuned dominance model (third 2x segment absent)",
        ),
        Preset(
            "moon-age",
            ArchitectureConfig(
                segments=((2, 32), (2, 128), (3, 256), (3, 512), (3, 512)),
                fc_layers=4, fc_width=2187, dropout=0.45,
            ),
            10 ** -4.8,
            "tuned age model (third 2x segment absent)",
        ),
        Preset(
            "moon-iq",
            ArchitectureConfig(
                segments=((2, 64), (2, 32), (3, 256), (3, 256)),
                fc_layers=3, fc_width=1244, dropout=0.38,
            ),
            10 ** -4.6,
            "tuned IQ model (two segments absent)",
        ),
        Preset(
            "moon-mini",
            ArchitectureConfig(
                segments=((2, 8), (2, 8), (2, 16), (3, 16), (3, 16)),
                fc_layers=1, fc_width=64, dropout=0.1,
            ),
            1e-3,
            "reduced-filter moon-style network (five-segment variant shape) "
            "for CPU-scale runs and tests",
        ),
    ]
}


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(
            f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}"
        ) from None
