"""Regenerate src/drowsy/data/portrait.pgm.

The source is the public-domain NASA portrait bundled with scikit-image as
``skimage.data.astronaut()``.  The head region is cropped and enlarged to a
640x480 frame so the face spans roughly 250 pixels, as it would for a
dashboard camera.  Requires scikit-image (not a runtime dependency).
"""
from pathlib import Path

import numpy as np
from skimage import color, data

from drowsy.imgcore import GrayFrame, resize_bicubic, write_pgm

OUT = Path(__file__).resolve().parents[1] / "src" / "drowsy" / "data" / "portrait.pgm"


def main():
    gray = np.floor(color.rgb2gray(data.astronaut()) * 255 + 0.5).astype(np.uint8)
    crop = GrayFrame(gray[0:192, 100:356])
    write_pgm(OUT, resize_bicubic(crop, 640, 480))
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
