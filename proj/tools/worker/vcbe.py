# SPDX-License-Identifier: Apache-2.0
"""Reader/writer for VCBE tensor files and the worker request loop."""

import hashlib
import json
import struct
import sys
import traceback

MAGIC = b"VCBE"
VERSION = 1


def write_vcbe(path, rows, cols, values, encoder_id, source_sha256=""):
    if len(values) != rows * cols:
        raise ValueError(f"expected {rows * cols} values, got {len(values)}")
    payload = struct.pack(f"<{len(values)}f", *values)
    header = json.dumps({
        "shape": [rows, cols],
        "dtype": "f32le",
        "encoder_id": encoder_id,
        "source_sha256": source_sha256,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }).encode()
    with open(path, "wb") as f:
        f.write(MAGIC + struct.pack("<II", VERSION, len(header)) + header + payload)


def read_vcbe(path):
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MAGIC:
        raise ValueError("not a VCBE file")
    version, header_len = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise ValueError(f"unsupported version {version}")
    header = json.loads(data[12:12 + header_len])
    payload = data[12 + header_len:]
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise ValueError("payload checksum mismatch")
    rows, cols = header["shape"]
    values = list(struct.unpack(f"<{rows * cols}f", payload))
    return header, values


def serve(handlers):
    """Runs one request: argv[1] is request.json, response.json goes to workdir."""
    request_path = sys.argv[1]
    with open(request_path) as f:
        request = json.load(f)
    response = {"ok": True}
    code = 0
    try:
        op = request.get("op")
        if op not in handlers:
            raise ValueError(f"unknown op {op!r}")
        handlers[op](request)
    except Exception as ex:  # reported back to the caller, not raised
        traceback.print_exc()
        response = {"ok": False, "error": f"{type(ex).__name__}: {ex}"}
        code = 1
    workdir = request.get("workdir", ".")
    with open(f"{workdir}/response.json", "w") as f:
        json.dump(response, f)
    return code
