#!/usr/bin/env python3
"""Convert torchvision ResNet-50 weights into a patchssl cnn_b3 checkpoint.

Only the stem and layer1-layer3 are kept. Batch norm is folded into a
per-channel affine. The sidecar marks the result as cnn_b3 with ImageNet input
normalisation.

    python tools/convert_resnet50.py resnet50.pth out/cnn_b3.bin
    python tools/convert_resnet50.py --torchvision IMAGENET1K_V2 out/cnn_b3.bin
"""
import argparse
import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"PSSLTNSR"
BLOCKS = (3, 4, 6)
IMAGENET = {"mean": [0.485, 0.456, 0.406], "std": [0.229, 0.224, 0.225]}


def load_state_dict(src, torchvision_weights):
    if torchvision_weights:
        import torchvision

        return torchvision.models.resnet50(weights=torchvision_weights).state_dict()
    obj = torch.load(src, map_location="cpu", weights_only=False)
    if isinstance(obj, torch.nn.Module):
        return obj.state_dict()
    if isinstance(obj, dict) and "state_dict" in obj:
        obj = obj["state_dict"]
    # strip DataParallel / wrapper prefixes
    return {k.removeprefix("module.").removeprefix("model."): v for k, v in obj.items()}


def conv_bn(sd, conv, bn, eps):
    w = sd[conv + ".weight"].double()
    gamma, beta = sd[bn + ".weight"].double(), sd[bn + ".bias"].double()
    mean, var = sd[bn + ".running_mean"].double(), sd[bn + ".running_var"].double()
    scale = gamma / torch.sqrt(var + eps)
    shift = beta - mean * scale
    return {
        "w": w.reshape(w.shape[0], -1),
        "bn_scale": scale.reshape(1, -1),
        "bn_shift": shift.reshape(1, -1),
    }


def collect(sd, eps):
    out = {}

    def put(prefix, parts):
        for k, v in parts.items():
            out[prefix + k] = v

    put("stem.", conv_bn(sd, "conv1", "bn1", eps))
    for s, n in enumerate(BLOCKS, start=1):
        for b in range(n):
            p = f"layer{s}.{b}."
            for i in (1, 2, 3):
                put(f"{p}conv{i}.", conv_bn(sd, f"{p}conv{i}", f"{p}bn{i}", eps))
            if f"{p}downsample.0.weight" in sd:
                put(f"{p}downsample.", conv_bn(sd, f"{p}downsample.0", f"{p}downsample.1", eps))
    return out


def write(path, tensors):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", 1, len(tensors)))
        for name in sorted(tensors):
            m = np.ascontiguousarray(tensors[name].numpy(), dtype="<f4")
            enc = name.encode()
            f.write(struct.pack("<I", len(enc)))
            f.write(enc)
            f.write(struct.pack("<II", *m.shape))
            f.write(m.tobytes())
    side = {
        "format": "patchssl-tensors-v1",
        "method": "imagenet_transfer",
        "encoder": {"kind": "cnn_b3", "embed_dim": 1024},
        "normalization": IMAGENET,
    }
    Path(str(path) + ".json").write_text(json.dumps(side, indent=2) + "\n")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("src", nargs="?", help="state_dict or pickled model (.pth)")
    ap.add_argument("out", type=Path)
    ap.add_argument("--torchvision", metavar="WEIGHTS", help="fetch torchvision weights by name instead")
    ap.add_argument("--bn-eps", type=float, default=1e-5)
    a = ap.parse_args()
    if bool(a.src) == bool(a.torchvision):
        ap.error("give exactly one of SRC or --torchvision")
    tensors = collect(load_state_dict(a.src, a.torchvision), a.bn_eps)
    write(a.out, tensors)
    print(f"wrote {len(tensors)} tensors to {a.out}")


if __name__ == "__main__":
    main()
