"""``.nbm`` model files: a JSON header followed by one raw weight blob.

Byte layout::

    offset  size  content
    0       4     magic b"NBM\\0"
    4       4     format version, uint32 little-endian
    8       8     header length H, uint64 little-endian
    16      H     UTF-8 JSON header
    16+H    B     weight blob, little-endian, tensors back to back

The header carries the node specs, dtype, input shape, provenance and,
for every tensor, its key, shape, and byte offset/length inside the blob.
"""

import json
import os
import struct

import numpy as np

from ..errors import ModelFormatError, UnknownLayerKindError, VersionError
from .spec import ModelGraph, node_from_dict

MAGIC = b"NBM\x00"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sIQ")


def model_to_bytes(model):
    dtype = np.dtype(model.dtype).newbyteorder("<")
    tensors = []
    chunks = []
    offset = 0
    for key in sorted(model.params):
        data = np.ascontiguousarray(model.params[key], dtype=dtype).tobytes()
        tensors.append({"key": key, "shape": list(model.params[key].shape), "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    header = {
        "format_version": FORMAT_VERSION,
        "name": model.name,
        "provenance": model.provenance,
        "dtype": np.dtype(model.dtype).name,
        "input_shape": list(model.input_shape),
        "nodes": [n.to_dict() for n in model.nodes],
        "tensors": tensors,
        "blob_nbytes": offset,
    }
    hbytes = json.dumps(header, indent=1, sort_keys=True).encode("utf-8")
    return _PREFIX.pack(MAGIC, FORMAT_VERSION, len(hbytes)) + hbytes + b"".join(chunks)


def save_model(model, path):
    data = model_to_bytes(model)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def model_from_bytes(buf):
    if len(buf) < _PREFIX.size:
        raise ModelFormatError("file too short for model prefix", offset=len(buf))
    magic, version, hlen = _PREFIX.unpack_from(buf, 0)
    if magic != MAGIC:
        raise ModelFormatError(f"bad magic {magic!r}", offset=0)
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported model format version {version} (expected {FORMAT_VERSION})", offset=4)
    start = _PREFIX.size
    if len(buf) < start + hlen:
        raise ModelFormatError(f"header truncated: need {hlen} bytes", offset=len(buf))
    try:
        header = json.loads(buf[start:start + hlen].decode("utf-8"))
    except UnicodeDecodeError as e:
        raise ModelFormatError("header is not UTF-8", offset=start + e.start) from None
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"malformed header: {e.msg}", offset=start + e.pos) from None
    if header.get("format_version") != FORMAT_VERSION:
        raise VersionError(f"header format_version {header.get('format_version')} != {FORMAT_VERSION}", offset=start)
    try:
        nodes = [node_from_dict(d) for d in header["nodes"]]
        dtype = np.dtype(header["dtype"]).newbyteorder("<")
        input_shape = header["input_shape"]
        tensors = header["tensors"]
        blob_nbytes = int(header["blob_nbytes"])
    except UnknownLayerKindError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise ModelFormatError(f"malformed header field: {e}", offset=start) from None
    blob_start = start + hlen
    if len(buf) < blob_start + blob_nbytes:
        raise ModelFormatError(
            f"weight blob truncated: expected {blob_nbytes} bytes, found {len(buf) - blob_start}", offset=len(buf)
        )
    if len(buf) > blob_start + blob_nbytes:
        raise ModelFormatError("trailing bytes after weight blob", offset=blob_start + blob_nbytes)
    params = {}
    for t in tensors:
        shape = tuple(t["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        if count * dtype.itemsize != t["nbytes"] or t["offset"] + t["nbytes"] > blob_nbytes:
            raise ModelFormatError(f"tensor {t['key']} has inconsistent size/offset", offset=blob_start + t["offset"])
        arr = np.frombuffer(buf, dtype=dtype, count=count, offset=blob_start + t["offset"])
        params[t["key"]] = arr.astype(dtype.newbyteorder("="), copy=True).reshape(shape)
    model = ModelGraph(header["name"], nodes, input_shape, params, header["provenance"], np.dtype(dtype).name)
    try:
        model.validate_params()
    except Exception as e:
        raise ModelFormatError(f"parameters do not match specs: {e}", offset=blob_start) from None
    return model


def load_model(path):
    with open(path, "rb") as f:
        return model_from_bytes(f.read())
