# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.
"""Temperature encoded as a stripe image, and its matched-filter decoder."""
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from resindesign.errors import FrequencyDomainError, InvalidParameters
from resindesign.models import IpptImage

logger = logging.getLogger(__name__)

IMAGE_SIZE = 64
FREQUENCY_OFFSET = 140.0
CONFIDENCE_THRESHOLD = 0.5
DEFAULT_CANDIDATES = (160.0, 180.0, 200.0)


@dataclass(frozen=True)
class DecodedTemperature:
    Tc: float
    confidence: float
    mirrored: bool
    low_confidence: bool


def ippt_frequency(Tc: float) -> float:
    """Stripe frequency in cycles per pixel."""
    if Tc <= FREQUENCY_OFFSET:
        raise FrequencyDomainError(
            f"Tc = {Tc} must exceed {FREQUENCY_OFFSET} to be encoded"
        )
    return 2.0 / (Tc - FREQUENCY_OFFSET)


def _profile(Tc: float, width: int) -> np.ndarray:
    x = np.arange(width)
    return 0.5 + 0.5 * np.sin(2 * np.pi * ippt_frequency(Tc) * x)


def make_ippt(Tc: float, size: int = IMAGE_SIZE) -> IpptImage:
    """Rows are identical; the pattern varies along columns only."""
    row = _profile(Tc, size)
    return IpptImage(pixels=np.tile(row, (size, 1)), Tc=float(Tc))


def decode_ippt(
    img: np.ndarray,
    candidates: Sequence[float] = DEFAULT_CANDIDATES,
    threshold: float = CONFIDENCE_THRESHOLD,
) -> DecodedTemperature:
    """
    Pick the candidate temperature whose stripe template best matches the
    row-averaged image.

    Each template is also tried mirrored (column x -> width-1-x), which is
    what a half turn of the image does to the stripes. The confidence is
    the Pearson correlation of the winning template.
    """
    img = np.asarray(img, dtype=float)
    if img.ndim != 2:
        raise InvalidParameters(f"Expected a 2D image, got {img.shape}")
    if not candidates:
        raise InvalidParameters("No candidate temperatures given")
    profile = img.mean(axis=0)
    if np.ptp(profile) == 0:
        raise InvalidParameters("Cannot decode a constant stripe profile")

    width = img.shape[1]
    templates = []
    for Tc in candidates:
        template = _profile(Tc, width)
        templates += [template, template[::-1]]
    scores = np.corrcoef(profile, np.array(templates))[0, 1:]
    best = int(np.nanargmax(scores))
    Tc = float(candidates[best // 2])
    confidence = float(scores[best])
    decoded = DecodedTemperature(
        Tc=Tc,
        confidence=confidence,
        mirrored=bool(best % 2),
        low_confidence=confidence < threshold,
    )
    if decoded.low_confidence:
        logger.warning(
            "Low-confidence stripe decode: Tc=%s score=%.3f", Tc, confidence
        )
    return decoded
