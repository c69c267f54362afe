#!/usr/bin/env python3
"""Convert torchvision's ImageNet VGG19 convolution weights to a stylenorm weights archive.

Archive layout (all integers little-endian uint32):
  "SNWT", version 1, tensor count,
  then per tensor: name length, name bytes, rank, dims..., float32 values.
Tensor names are stage<s>_conv<c>.weight / .bias with weights shaped (out, in, 3, 3).

Prints the SHA-256 to put in the transfer config as weights_digest.
"""

import argparse
import hashlib
import struct
import sys

STAGE_CONVS = [2, 2, 4, 4, 4]


def conv_names():
    names = []
    for s, n in enumerate(STAGE_CONVS, start=1):
        names.extend(f"stage{s}_conv{c}" for c in range(1, n + 1))
    return names


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("out", help="archive path to write")
    parser.add_argument("--state-dict", help="local torchvision vgg19 .pth file instead of downloading")
    args = parser.parse_args()

    try:
        import torch
        import torchvision
    except ImportError:
        sys.exit("torch and torchvision are required for the export")

    if args.state_dict:
        model = torchvision.models.vgg19(weights=None)
        model.load_state_dict(torch.load(args.state_dict, map_location="cpu"))
    else:
        model = torchvision.models.vgg19(weights=torchvision.models.VGG19_Weights.IMAGENET1K_V1)
    convs = [m for m in model.features if isinstance(m, torch.nn.Conv2d)]
    names = conv_names()
    assert len(convs) == len(names) == 16

    tensors = {}
    for name, conv in zip(names, convs):
        tensors[name + ".weight"] = conv.weight.detach().to(torch.float32).contiguous()
        tensors[name + ".bias"] = conv.bias.detach().to(torch.float32).contiguous()

    with open(args.out, "wb") as f:
        f.write(b"SNWT")
        f.write(struct.pack("<II", 1, len(tensors)))
        for name in sorted(tensors):
            t = tensors[name]
            raw = name.encode()
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<I", t.dim()))
            f.write(struct.pack(f"<{t.dim()}I", *t.shape))
            f.write(struct.pack(f"<{t.numel()}f", *t.flatten().tolist()))

    with open(args.out, "rb") as f:
        print(hashlib.sha256(f.read()).hexdigest())


if __name__ == "__main__":
    main()
