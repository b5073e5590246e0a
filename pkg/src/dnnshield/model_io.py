"""Model and dataset serialization.

Model: a directory holding a text manifest (4-byte magic "DNS1" followed by
JSON) that lists layers/shapes/strides/pads and references one little-endian
float32 blob file per parameter tensor by file name and byte length.

Dataset: single binary container, magic "DSET", u32 count, u32 ndim plus the
per-input dims, then `count` raw little-endian float32 tensors followed by
`count` u16 labels.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .engine import (
    AvgPool,
    Conv2D,
    Flatten,
    FullyConnected,
    LabeledDataset,
    MaxPool,
    Model,
    ReLU,
    ShapeMismatch,
    Softmax,
)
from .errors import FormatError

MODEL_MAGIC = b"DNS1"
DATASET_MAGIC = b"DSET"
MODEL_VERSION = 1
MANIFEST_NAME = "model.dns"


def _tensor_entry(name, arr, blobs):
    fname = f"p{len(blobs):04d}.bin"
    data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    blobs.append((fname, data))
    return {"name": name, "file": fname, "shape": list(arr.shape), "byte_length": len(data)}


def save_model(model, path):
    """Write the model into directory `path` (created if missing)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    blobs = []
    layers = []
    for layer in model.layers:
        entry = {"kind": layer.kind}
        if layer.kind == "conv2d":
            entry["stride"] = layer.stride
            entry["padding"] = layer.padding
            entry["weights"] = _tensor_entry("weights", layer.weights, blobs)
            entry["biases"] = _tensor_entry("biases", layer.biases, blobs)
        elif layer.kind == "fully_connected":
            entry["weights"] = _tensor_entry("weights", layer.weights, blobs)
            entry["biases"] = _tensor_entry("biases", layer.biases, blobs)
        elif layer.kind in ("maxpool", "avgpool"):
            entry["size"] = layer.size
            entry["stride"] = layer.stride
        layers.append(entry)
    manifest = {
        "version": MODEL_VERSION,
        "input_shape": list(model.input_shape),
        "num_classes": model.num_classes,
        "metadata": model.metadata,
        "layers": layers,
    }
    for fname, data in blobs:
        (path / fname).write_bytes(data)
    payload = MODEL_MAGIC + json.dumps(manifest, indent=1, sort_keys=True).encode()
    (path / MANIFEST_NAME).write_bytes(payload)
    return path / MANIFEST_NAME


def _load_tensor(path, entry):
    blob_path = path / entry["file"]
    if not blob_path.exists():
        raise FormatError(f"missing blob {entry['file']}")
    data = blob_path.read_bytes()
    if len(data) != entry["byte_length"]:
        raise FormatError(
            f"blob {entry['file']} is {len(data)} bytes, manifest says {entry['byte_length']}")
    expected = int(np.prod(entry["shape"])) * 4
    if entry["byte_length"] != expected:
        raise FormatError(
            f"blob {entry['file']} length {entry['byte_length']} != shape {entry['shape']}")
    return np.frombuffer(data, dtype="<f4").reshape(entry["shape"]).astype(np.float32)


def load_model(path):
    path = Path(path)
    manifest_path = path / MANIFEST_NAME if path.is_dir() else path
    path = manifest_path.parent
    try:
        raw = manifest_path.read_bytes()
    except OSError as e:
        raise FormatError(f"cannot read manifest: {e}") from e
    if raw[:4] != MODEL_MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r}, expected {MODEL_MAGIC!r}")
    try:
        manifest = json.loads(raw[4:].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"manifest is not valid JSON: {e}") from e
    if manifest.get("version") != MODEL_VERSION:
        raise FormatError(f"unsupported model version {manifest.get('version')}")
    layers = []
    for entry in manifest["layers"]:
        kind = entry["kind"]
        if kind == "conv2d":
            layers.append(Conv2D(_load_tensor(path, entry["weights"]),
                                 _load_tensor(path, entry["biases"]),
                                 stride=entry["stride"], padding=entry["padding"]))
        elif kind == "fully_connected":
            layers.append(FullyConnected(_load_tensor(path, entry["weights"]),
                                         _load_tensor(path, entry["biases"])))
        elif kind == "relu":
            layers.append(ReLU())
        elif kind == "maxpool":
            layers.append(MaxPool(entry["size"], entry["stride"]))
        elif kind == "avgpool":
            layers.append(AvgPool(entry["size"], entry["stride"]))
        elif kind == "flatten":
            layers.append(Flatten())
        elif kind == "softmax":
            layers.append(Softmax())
        else:
            raise FormatError(f"unknown layer kind {kind!r}")
    try:
        return Model(layers, manifest["input_shape"], manifest["num_classes"],
                     manifest.get("metadata"))
    except ShapeMismatch as e:
        raise FormatError(f"inconsistent model shapes: {e}") from e


def save_dataset(dataset, path):
    """Write inputs + labels in the DSET container format."""
    path = Path(path)
    inputs = np.ascontiguousarray(dataset.inputs, dtype="<f4")
    labels = np.asarray(dataset.labels)
    if labels.size and labels.max() >= 1 << 16:
        raise FormatError("dataset labels exceed u16 range")
    dims = inputs.shape[1:]
    header = DATASET_MAGIC + struct.pack("<II", inputs.shape[0], len(dims))
    header += struct.pack(f"<{len(dims)}I", *dims)
    with open(path, "wb") as f:
        f.write(header)
        f.write(inputs.tobytes())
        f.write(labels.astype("<u2").tobytes())
    return path


def load_dataset(path, num_classes=None):
    """Read a DSET container. num_classes defaults to max(label)+1."""
    raw = Path(path).read_bytes()
    if raw[:4] != DATASET_MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r}, expected {DATASET_MAGIC!r}")
    if len(raw) < 12:
        raise FormatError("truncated dataset header")
    count, ndim = struct.unpack_from("<II", raw, 4)
    off = 12
    if len(raw) < off + 4 * ndim:
        raise FormatError("truncated dataset dims")
    dims = struct.unpack_from(f"<{ndim}I", raw, off)
    off += 4 * ndim
    per = int(np.prod(dims))
    need = off + count * per * 4 + count * 2
    if len(raw) != need:
        raise FormatError(f"dataset is {len(raw)} bytes, header implies {need}")
    inputs = np.frombuffer(raw, dtype="<f4", count=count * per, offset=off)
    inputs = inputs.reshape((count,) + dims).astype(np.float32)
    labels = np.frombuffer(raw, dtype="<u2", count=count, offset=off + count * per * 4)
    labels = labels.astype(np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if count else 1
    return LabeledDataset(inputs, labels, num_classes)
