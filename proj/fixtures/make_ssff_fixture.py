#!/usr/bin/env python3
"""Writes the SSFF fixture (config directory, input levels, golden outputs).

The golden outputs are computed here with numpy, independently of the C++
implementation, from the float32 values actually stored in the files.
"""
import json
import math
import pathlib
import struct

import numpy as np

OUT = pathlib.Path(__file__).resolve().parent / "ssff"


def write_fmap(path, arr):
    arr = np.asarray(arr, dtype=np.float32)
    c, h, w = arr.shape
    with open(path, "wb") as f:
        f.write(b"FMAP")
        f.write(struct.pack("<III", c, h, w))
        f.write(arr.astype("<f4").tobytes(order="C"))


def kernel(sigma):
    r = max(1, math.ceil(3 * sigma))
    u = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(u[:, None] ** 2 + u[None, :] ** 2) / (2 * sigma * sigma))
    return g / g.sum(), r


def smooth(fm, sigma):
    k, r = kernel(sigma)
    padded = np.pad(fm, ((0, 0), (r, r), (r, r)), mode="edge")
    out = np.zeros_like(fm)
    h, w = fm.shape[1:]
    for du in range(-r, r + 1):
        for dv in range(-r, r + 1):
            # out[i, j] += f[i - du, j - dv] * k[du, dv]
            out += padded[:, r - du : r - du + h, r - dv : r - dv + w] * k[du + r, dv + r]
    return out


def main():
    rng = np.random.default_rng(20240611)
    dims = [(16, 16), (8, 8), (4, 4)]
    level_channels = [8, 8, 8]
    common, c_out, k = 8, 8, 3
    sigmas = [0.5, 1.0, 2.0]

    f32 = lambda a: a.astype(np.float32).astype(np.float64)
    levels = [f32(rng.uniform(-1, 1, (c, h, w))) for c, (h, w) in zip(level_channels, dims)]
    norms = [f32(rng.normal(0, 1 / math.sqrt(c), (common, c, 1, 1))) for c in level_channels]
    fuse = f32(rng.normal(0, 1 / math.sqrt(common * 3 * k * k), (c_out, common, 3, k, k)))

    OUT.mkdir(parents=True, exist_ok=True)
    for i, lvl in enumerate(levels):
        write_fmap(OUT / f"level_{i}.fmap", lvl)
        write_fmap(OUT / f"norm_{i}.fmap", norms[i].reshape(common, level_channels[i], 1))
    write_fmap(OUT / "fuse.fmap", fuse.reshape(c_out, common, -1))
    manifest = {
        "levels": 3,
        "common_channels": common,
        "sigma_schedule": sigmas,
        "level_channels": level_channels,
        "norm_weights": [f"norm_{i}.fmap" for i in range(3)],
        "fuse_weights": "fuse.fmap",
        "fuse_shape": [c_out, common, 3, k, k],
        "level_dims": [list(d) for d in dims],
    }
    (OUT / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")

    slices = []
    for i, lvl in enumerate(levels):
        normed = np.einsum("oc,chw->ohw", norms[i][:, :, 0, 0], lvl)
        factor = dims[0][0] // lvl.shape[1]
        up = normed.repeat(factor, axis=1).repeat(factor, axis=2)
        slices.append(smooth(up, sigmas[i]))
    vol = np.stack(slices, axis=1)  # (C, D, H, W)
    p = k // 2
    vp = np.pad(vol, ((0, 0), (0, 0), (p, p), (p, p)))
    h, w = dims[0]
    out = np.zeros((c_out, h, w))
    for a in range(k):
        for b in range(k):
            out += np.einsum("ocd,cdhw->ohw", fuse[:, :, :, a, b], vp[:, :, a : a + h, b : b + w])

    write_fmap(OUT / "golden_finest_slice.fmap", slices[0])
    write_fmap(OUT / "golden_output.fmap", out)


if __name__ == "__main__":
    main()
