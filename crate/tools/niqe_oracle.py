"""Reference NIQE scores for the fixture images, computed with scikit-video's
implementation (scipy.misc.imresize replaced by the equivalent PIL call).

usage: python3 tools/niqe_oracle.py /path/to/scikit-video > crates/core/tests/fixtures/niqe_reference.json
"""
import json
import sys

import numpy as np
import scipy.io
from PIL import Image

sys.path.insert(0, sys.argv[1])
import scipy.misc


def imresize(arr, size, interp="bicubic", mode="F"):
    im = Image.fromarray(arr, mode="F")
    new = tuple((np.array(im.size) * size).astype(int))
    return np.array(im.resize(new, resample=Image.BICUBIC))


scipy.misc.imresize = imresize
np.int = int
from skvideo.measure import niqe  # noqa: E402


def fixture(h, w, noisy):
    y, x = np.mgrid[0:h, 0:w]
    g = 128 + 60 * np.sin(0.07 * x + 0.05 * y) + 0.2 * ((x * 7919 + y * 104729) % 256 - 128)
    if noisy:
        g = g + ((x * 31337 + y * 7331) % 97 - 48)
    return g


out = {}
for name, noisy in [("clean", False), ("noisy", True)]:
    g = fixture(200, 230, noisy)
    out[name] = float(niqe(g.astype(np.float64))[0])
print(json.dumps({"height": 200, "width": 230, **out}))
