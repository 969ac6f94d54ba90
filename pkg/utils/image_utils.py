"""
Raster rendering of RSS maps and RSS crops
"""

import logging
from typing import Optional, Sequence, Tuple

import numpy as np
from PIL import Image, ImageDraw

from core.propagation import RSS_FLOOR_DBM, RssMap

logger = logging.getLogger(__name__)

# dark blue -> teal -> yellow
COLOR_ANCHORS = np.array([
    [68, 1, 84],
    [59, 82, 139],
    [33, 145, 140],
    [94, 201, 98],
    [253, 231, 37],
], dtype=np.float64)
FLOOR_COLOR = (40, 40, 40)


class ImageUtils:
    """Utility functions for rendering RSS rasters"""

    @staticmethod
    def colorize(values):
        """Map values in [0, 1] to RGB through the anchor colors

        Args:
            values: array of values in [0, 1]

        Returns:
            uint8 array with a trailing RGB axis
        """
        v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0) * (len(COLOR_ANCHORS) - 1)
        lower = np.minimum(np.floor(v).astype(int), len(COLOR_ANCHORS) - 2)
        frac = (v - lower)[..., None]
        rgb = COLOR_ANCHORS[lower] * (1.0 - frac) + COLOR_ANCHORS[lower + 1] * frac
        return np.round(rgb).astype(np.uint8)

    @staticmethod
    def rss_map_image(rss_map: RssMap, scale: int = 4,
                      markers: Optional[Sequence[Tuple[float, float]]] = None):
        """Colour image of an RSS map, north up, floor pixels in dark grey

        Args:
            rss_map: map in dBm
            scale: pixels per map cell
            markers: optional ground positions (x, y) drawn as small circles

        Returns:
            PIL Image object
        """
        grid = rss_map.grid
        live = grid > RSS_FLOOR_DBM
        rgb = np.empty(grid.shape + (3,), dtype=np.uint8)
        rgb[...] = FLOOR_COLOR
        if live.any():
            lo, hi = float(grid[live].min()), float(grid[live].max())
            span = hi - lo if hi > lo else 1.0
            rgb[live] = ImageUtils.colorize((grid[live] - lo) / span)
        # row 0 is the southern edge of the scene
        image = Image.fromarray(np.ascontiguousarray(rgb[::-1])).resize((grid.shape[1] * scale, grid.shape[0] * scale), Image.NEAREST)

        if markers:
            draw = ImageDraw.Draw(image)
            height_px = grid.shape[0] * scale
            res = rss_map.resolution_m_per_px
            for x, y in markers:
                cx = (x - rss_map.origin_m[0]) / res * scale
                cy = height_px - (y - rss_map.origin_m[1]) / res * scale
                draw.ellipse([cx - 3, cy - 3, cx + 3, cy + 3], outline=(255, 255, 255))
        return image

    @staticmethod
    def crop_image(patch, scale: int = 8):
        """Grayscale image of a normalized crop (0 black, 1 white)"""
        values = np.clip(np.asarray(patch, dtype=np.float64), 0.0, 1.0)
        gray = np.round(values[::-1] * 255.0).astype(np.uint8)
        image = Image.fromarray(gray)
        return image.resize((gray.shape[1] * scale, gray.shape[0] * scale), Image.NEAREST)


def render_rss_map(rss_map: RssMap, filename: str, scale: int = 4,
                   markers: Optional[Sequence[Tuple[float, float]]] = None) -> bool:
    """Write the RSS map as a colour PNG; returns success"""
    try:
        ImageUtils.rss_map_image(rss_map, scale, markers).save(filename, format='PNG')
        logger.info(f"RSS map rendered to {filename}")
        return True
    except Exception as e:
        logger.error(f"Error rendering RSS map: {str(e)}")
        return False


def render_crop(patch, filename: str, scale: int = 8) -> bool:
    """Write a normalized crop as a grayscale PNG; returns success"""
    try:
        ImageUtils.crop_image(patch, scale).save(filename, format='PNG')
        logger.debug(f"RSS crop rendered to {filename}")
        return True
    except Exception as e:
        logger.error(f"Error rendering crop: {str(e)}")
        return False
