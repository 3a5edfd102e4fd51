#!/usr/bin/env python3
"""Prints torchxrayvision DenseNet probabilities for one image as JSON.

Needs `pip install torchxrayvision`; weights download on first use.
"""
import argparse
import json

import numpy as np
import skimage.io
import torch
import torchxrayvision as xrv

KEYS = {
    "Cardiomegaly": "cardiomegaly",
    "Edema": "edema",
    "Effusion": "pleural_effusion",
    "Pneumonia": "pneumonia",
    "Hernia": "hernia",
    "Mass": "mass",
}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--weights", default="densenet121-res224-all")
    ap.add_argument("image")
    args = ap.parse_args()

    img = skimage.io.imread(args.image, as_gray=True).astype(np.float32)
    if img.max() <= 1.0:
        img = img * 255.0
    img = xrv.datasets.normalize(img, 255)[None, ...]
    img = xrv.datasets.XRayResizer(224)(xrv.datasets.XRayCenterCrop()(img))

    model = xrv.models.DenseNet(weights=args.weights).eval()
    with torch.no_grad():
        out = model(torch.from_numpy(img)[None, ...])[0].numpy()
    probs = {KEYS[p]: float(out[i]) for i, p in enumerate(model.pathologies) if p in KEYS}
    print(json.dumps(probs))


if __name__ == "__main__":
    main()
