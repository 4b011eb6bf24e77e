#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
# Weight-free stand-in for the model worker; exercises the process protocol.
# weights.fail_op makes the named op report failure.

import hashlib
import os
import struct
import sys
import zlib

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "tools", "worker"))
import vcbe  # noqa: E402


def png_size(path):
    with open(path, "rb") as f:
        head = f.read(24)
    if head[:8] != b"\x89PNG\r\n\x1a\n":
        raise ValueError("fake worker only reads PNG")
    return struct.unpack(">II", head[16:24])


def maybe_fail(req):
    if req.get("weights", {}).get("fail_op") == req["op"]:
        raise RuntimeError(f"injected failure in {req['op']}")


def encode(req):
    maybe_fail(req)
    with open(req["image"], "rb") as f:
        digest = hashlib.sha256(f.read()).digest()
    values = []
    j = 0
    while len(values) < 4 * 768:
        block = hashlib.sha256(digest + b"fake" + struct.pack("<I", j)).digest()
        values.extend(b / 127.5 - 1.0 for b in block)
        j += 1
    vcbe.write_vcbe(req["output"], 4, 768, values[:4 * 768], req["encoder_id"])


def depth(req):
    maybe_fail(req)
    w, h = png_size(req["image"])
    values = [(x + y) / float(w + h) for y in range(h) for x in range(w)]
    vcbe.write_vcbe(req["output"], h, w, values, req["estimator_id"])


def generate(req):
    maybe_fail(req)
    _, values = vcbe.read_vcbe(req["embedding"])
    s = req["settings"]
    w, h = s["width"], s["height"]
    tone = int((sum(values) % 1.0) * 255) if values else 0
    shade = (s["seed"] + int(req["depth_scale"] * 100)) % 256
    row = b"\x00" + bytes([tone, shade, 128]) * w
    raw = row * h

    def chunk(t, d):
        return struct.pack(">I", len(d)) + t + d + struct.pack(">I", zlib.crc32(t + d))

    png = (b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)) +
           chunk(b"IDAT", zlib.compress(raw)) + chunk(b"IEND", b""))
    with open(req["output"], "wb") as f:
        f.write(png)


if __name__ == "__main__":
    sys.exit(vcbe.serve({"encode": encode, "depth": depth, "generate": generate}))
