"""Regenerate tests/data/face_112x96.png from scikit-image's astronaut photo (public domain, NASA)."""

from pathlib import Path

import numpy as np
from PIL import Image
from skimage import data

OUT = Path(__file__).resolve().parent.parent / "tests" / "data" / "face_112x96.png"


def main():
    img = data.astronaut()
    # face region, aspect 112:96, resized to the aligned-crop size
    crop = img[25:235, 135:315]
    face = Image.fromarray(crop).resize((96, 112), Image.LANCZOS)
    face.save(OUT)
    print(f"wrote {OUT} {np.asarray(face).shape}")


if __name__ == "__main__":
    main()
