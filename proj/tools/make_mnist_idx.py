#!/usr/bin/env python3
# Copyright 2026 The lssl Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Builds gzip'd IDX files from the 10k-digit MNIST subset shipped in the npm
`mnist` package (src/digits/<d>.json, 784 grey values in [0,1] per image).

Usage: make_mnist_idx.py <unpacked npm package dir> <output dir>

Pixels are re-quantized with round(v * 255). The 10000 digits are shuffled
with a fixed seed and split 8000 train / 2000 test.
"""
import gzip
import json
import os
import struct
import sys

import numpy as np


def write_idx(path, magic, arr):
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in arr.shape)
    with gzip.GzipFile(path, "wb", mtime=0) as fh:
        fh.write(header + arr.astype(np.uint8).tobytes())


def main():
    src, out = sys.argv[1], sys.argv[2]
    images, labels = [], []
    for digit in range(10):
        with open(os.path.join(src, "src", "digits", f"{digit}.json")) as fh:
            flat = np.asarray(json.load(fh)["data"], dtype=np.float64)
        imgs = flat.reshape(-1, 28, 28)
        images.append(np.clip(np.rint(imgs * 255.0), 0, 255))
        labels.append(np.full(len(imgs), digit))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    perm = np.random.RandomState(20260101).permutation(len(labels))
    images, labels = images[perm], labels[perm]
    n_train = 8000
    os.makedirs(out, exist_ok=True)
    write_idx(os.path.join(out, "train-images-idx3-ubyte.gz"), 2051, images[:n_train])
    write_idx(os.path.join(out, "train-labels-idx1-ubyte.gz"), 2049, labels[:n_train])
    write_idx(os.path.join(out, "t10k-images-idx3-ubyte.gz"), 2051, images[n_train:])
    write_idx(os.path.join(out, "t10k-labels-idx1-ubyte.gz"), 2049, labels[n_train:])


if __name__ == "__main__":
    main()
