"""Debug images of spectrograms and attention alignments

Images are written as PNG with OpenCV. Failing to draw or write an image is
logged and never interrupts training or conversion.
"""
import logging
import os
from typing import Optional, Sequence

import cv2
import numpy as np

logger = logging.getLogger(__name__)

_MIN_HEIGHT = 160
"""Images are scaled up to at least this many pixels high"""


def _to_uint8(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    low, high = float(np.min(values)), float(np.max(values))
    if high - low < 1e-12:
        return np.zeros(values.shape, dtype=np.uint8)
    return np.round(255.0 * (values - low) / (high - low)).astype(np.uint8)


def _scale(image: np.ndarray) -> np.ndarray:
    height = image.shape[0]
    if height >= _MIN_HEIGHT:
        return image
    factor = int(np.ceil(_MIN_HEIGHT / height))
    return cv2.resize(
        image,
        (image.shape[1] * factor, height * factor),
        interpolation=cv2.INTER_NEAREST,
    )


def spectrogram_image(values: np.ndarray) -> np.ndarray:
    """Renders ``[n_frames x n_bands]`` values with time on the horizontal axis
    and low frequencies at the bottom

    :return: BGR image
    """
    image = _to_uint8(np.flipud(np.asarray(values).T))
    return _scale(cv2.applyColorMap(image, cv2.COLORMAP_VIRIDIS))


def alignment_image(alignment: np.ndarray) -> np.ndarray:
    """Renders ``[decoder steps x encoder frames]`` attention weights with
    decoder steps on the horizontal axis

    A monotonic alignment shows up as a rising diagonal.
    """
    image = _to_uint8(np.flipud(np.asarray(alignment).T))
    return _scale(cv2.applyColorMap(image, cv2.COLORMAP_INFERNO))


def stacked_image(images: Sequence[np.ndarray], labels: Optional[Sequence[str]] = None):
    """Stacks images of possibly different widths vertically with optional
    captions
    """
    width = max(image.shape[1] for image in images)
    rows = []
    for i, image in enumerate(images):
        row = cv2.copyMakeBorder(
            image, 0, 0, 0, width - image.shape[1], cv2.BORDER_CONSTANT, value=0
        )
        if labels is not None:
            row = cv2.putText(
                row,
                labels[i],
                (4, 16),
                cv2.FONT_HERSHEY_SIMPLEX,
                0.5,
                (255, 255, 255),
                1,
                cv2.LINE_AA,
            )
        rows.append(row)
    return cv2.vconcat(rows)


def write_image(path: str, image: np.ndarray) -> bool:
    """Writes a PNG image, creating parent directories

    :return: True if the image was written
    """
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        if not cv2.imwrite(path, image):
            logger.info(f"Could not write debug image {path}")
            return False
    except (cv2.error, OSError) as e:
        logger.info(f"Could not write debug image {path}: {e}")
        return False
    logger.debug(f"Wrote debug image {path}")
    return True


def write_conversion_image(
    path: str,
    source: np.ndarray,
    synthesized: np.ndarray,
    enhanced: Optional[np.ndarray] = None,
) -> bool:
    """Writes the source, synthesized and (optionally) enhanced mel
    spectrograms of a conversion one above the other
    """
    images = [spectrogram_image(source), spectrogram_image(synthesized)]
    labels = ["source", "synthesized"]
    if enhanced is not None:
        images.append(spectrogram_image(enhanced))
        labels.append("enhanced")
    try:
        image = stacked_image(images, labels)
    except cv2.error as e:
        logger.info(f"Could not draw conversion image: {e}")
        return False
    return write_image(path, image)
