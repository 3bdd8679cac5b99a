"""Regenerates the JPEG reference fixtures with Pillow.

Writes input_<name>.ppm and q70_<name>.ppm (decoded after a quality 70,
4:4:4 round trip) next to this script.
"""

import io
from pathlib import Path

import numpy as np
from PIL import Image

HERE = Path(__file__).parent
QUALITY = 70


def inputs():
    rng = np.random.default_rng(20240611)
    y, x = np.mgrid[0:64, 0:64].astype(np.float64)
    gradient = np.stack([x * 4, y * 4, 255 - (x + y) * 2], axis=-1)
    waves = np.stack(
        [
            128 + 90 * np.sin(x * 0.35 + y * 0.1),
            128 + 70 * np.cos(y * 0.27),
            128 + 60 * np.sin((x - y) * 0.19),
        ],
        axis=-1,
    )
    noisy = np.clip(120 + rng.normal(0, 35, size=(64, 64, 3)), 0, 255)
    odd = np.clip(waves[:37, :45] + rng.normal(0, 10, size=(37, 45, 3)), 0, 255)
    return {"gradient": gradient, "waves": waves, "noisy": noisy, "odd": odd}


def main():
    for name, arr in inputs().items():
        img = Image.fromarray(np.clip(np.rint(arr), 0, 255).astype(np.uint8), "RGB")
        img.save(HERE / f"input_{name}.ppm")
        buf = io.BytesIO()
        img.save(buf, format="JPEG", quality=QUALITY, subsampling=0)
        buf.seek(0)
        Image.open(buf).convert("RGB").save(HERE / f"q{QUALITY}_{name}.ppm")


if __name__ == "__main__":
    main()
