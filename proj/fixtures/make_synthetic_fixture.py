#!/usr/bin/env python3
"""Writes the 20-image synthetic scene suite used by the refinement checks.

Each 1280x1024 scene places objects in distinct cells of an 8x6 grid so no two
overlap. Size bands (pixels, square):
  large  56-72   reference objects, confident in the whole-image pass
  medium 22-28   below the refinement threshold, localized well enough at IoU 0.5
  small  15-17   above the score cut but mislocalized at whole-image scale
  tiny    9-11   below the score cut at whole-image scale
  micro   3-5    below the first-pass floor, never detected
Only labels and metadata are written; the synthetic backend needs no pixels.
"""
import json
import pathlib

import numpy as np

OUT = pathlib.Path(__file__).resolve().parent / "synthetic"
W, H = 1280, 1024
COLS, ROWS = 8, 6
BANDS = [("large", 56, 72, 2), ("medium", 22, 28, 4), ("small", 15, 17, 4), ("tiny", 9, 11, 4), ("micro", 3, 5, 2)]
CLASSES = ["vehicle", "person", "bicycle"]


def main():
    rng = np.random.default_rng(20241017)
    (OUT / "labels").mkdir(parents=True, exist_ok=True)
    entries = []
    cw, ch = W // COLS, H // ROWS
    for i in range(20):
        image_id = f"scene_{i:02d}"
        cells = rng.permutation(COLS * ROWS)
        lines = []
        k = 0
        for _, lo, hi, count in BANDS:
            for _ in range(count):
                cell = int(cells[k])
                k += 1
                size = int(rng.integers(lo, hi + 1))
                gx, gy = cell % COLS, cell // COLS
                x0 = gx * cw + int(rng.integers(8, cw - size - 8 + 1))
                y0 = gy * ch + int(rng.integers(8, ch - size - 8 + 1))
                cls = int(rng.integers(0, len(CLASSES)))
                cx, cy = (x0 + size / 2) / W, (y0 + size / 2) / H
                lines.append(f"{cls} {cx:.8f} {cy:.8f} {size / W:.8f} {size / H:.8f}")
        (OUT / "labels" / f"{image_id}.txt").write_text("\n".join(lines) + "\n")
        entries.append({"image_id": image_id, "image_path": f"images/{image_id}.png", "width": W, "height": H,
                        "label_path": f"labels/{image_id}.txt"})

    manifest = {"class_names": CLASSES, "entries": entries}
    (OUT / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")

    scene = {"base_conf": 0.1, "area_gain": 17.7, "noise_sigma": 0.0, "seed": 7, "min_visibility": 0.5,
             "loc_error_px": 2.0}
    (OUT / "scene.json").write_text(json.dumps(scene, indent=2) + "\n")

    run = {
        "first_pass": {"target_size": [640, 640], "conf_floor": 0.16},
        "refine": {"conf_threshold": 0.5, "gate_iou": 0.25, "scale_min": 1.0, "scale_max": 4.0, "crop_pad": 0.25,
                   "target_size": [640, 640], "nms_iou": 0.5, "refine_conf_floor": 0.05},
        "eval": {"score_cut": 0.25, "interpolation": "coco101"},
    }
    (OUT / "run.json").write_text(json.dumps(run, indent=2) + "\n")


if __name__ == "__main__":
    main()
