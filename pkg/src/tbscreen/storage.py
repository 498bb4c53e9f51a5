"""File formats: grayscale image decoding, manifests, atlas directories and
the TBDX checkpoint container.

TBDX layout (all integers little-endian)::

    b"TBDX" | u32 version | u32 directory length | directory (UTF-8 JSON) | payload

The directory lists every tensor as ``name, dtype (f32|f64), shape, offset,
length`` with offsets relative to the payload start, together with the
architecture, the LSTM gate order and the freeze flag.
"""

import csv
import json
import struct
from dataclasses import asdict
from pathlib import Path
from typing import List, Tuple

import numpy as np
from PIL import Image

from .model import Architecture, ModelParams
from .recurrent import GATE_ORDER
from .segmentation import AtlasEntry

MAGIC = b"TBDX"
VERSION = 1
DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
IMAGE_SUFFIXES = (".png", ".pgm")


class DatasetError(ValueError):
    """A manifest row or image file could not be used."""


class CheckpointError(ValueError):
    pass


# -- images -----------------------------------------------------------------

def _pgm_tokens(data: bytes, count: int):
    tokens, pos = [], 2
    while len(tokens) < count:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while data[pos:pos + 1] not in (b"\n", b"\r", b""):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(int(data[start:pos]))
    return tokens, pos


def read_pgm(path) -> np.ndarray:
    """Binary (P5) or ASCII (P2) PGM scaled by its declared maximum value."""
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic not in (b"P5", b"P2"):
        raise DatasetError(f"{path}: not a PGM file")
    (width, height, maxval), pos = _pgm_tokens(data, 3)
    if not 0 < maxval < 65536:
        raise DatasetError(f"{path}: invalid maxval {maxval}")
    if magic == b"P5":
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        raw = data[pos + 1:pos + 1 + width * height * dtype.itemsize]
        if len(raw) != width * height * dtype.itemsize:
            raise DatasetError(f"{path}: truncated pixel data")
        pixels = np.frombuffer(raw, dtype=dtype).astype(np.float64)
    else:
        values, _ = _pgm_tokens(data, 3 + width * height)
        pixels = np.array(values[3:], dtype=np.float64)
    if pixels.max(initial=0) > maxval:
        raise DatasetError(f"{path}: pixel exceeds maxval {maxval}")
    return (pixels / maxval).reshape(height, width)


def write_pgm(path, img: np.ndarray, maxval: int = 65535):
    values = np.round(np.clip(img, 0.0, 1.0) * maxval)
    dtype = ">u2" if maxval > 255 else "u1"
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode()
    Path(path).write_bytes(header + values.astype(dtype).tobytes())


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        mode = im.mode
        if mode in ("I;16", "I;16B", "I;16L", "I"):
            arr = np.asarray(im, dtype=np.float64) / 65535.0
        elif mode == "L":
            arr = np.asarray(im, dtype=np.float64) / 255.0
        elif mode == "1":
            arr = np.asarray(im, dtype=np.float64)
        else:
            raise DatasetError(f"{path}: expected a grayscale image, got mode {mode}")
    if arr.min(initial=0) < 0 or arr.max(initial=0) > 1:
        raise DatasetError(f"{path}: intensities outside the 16-bit range")
    return arr


def read_image(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"{path}: file not found")
    try:
        if path.suffix.lower() == ".pgm":
            return read_pgm(path)
        return read_png(path)
    except DatasetError:
        raise
    except Exception as exc:
        raise DatasetError(f"{path}: cannot decode image ({exc})") from exc


def write_png(path, img: np.ndarray, bits: int = 16):
    img = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    if bits == 16:
        Image.fromarray(np.round(img * 65535).astype(np.uint16)).save(path)
    else:
        Image.fromarray(np.round(img * 255).astype(np.uint8)).save(path)


def write_mask(path, mask: np.ndarray):
    Image.fromarray((np.asarray(mask) > 0).astype(np.uint8) * 255).save(path)


def read_mask(path) -> np.ndarray:
    return (read_image(path) > 0).astype(np.uint8)


# -- manifests and atlases --------------------------------------------------

def read_manifest(path) -> List[Tuple[Path, int]]:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"{path}: manifest not found")
    rows = []
    seen = set()
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["path", "label"]:
            raise DatasetError(f"{path}: header must be 'path,label'")
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            if len(row) != 2:
                raise DatasetError(f"{path}:{lineno}: expected 2 fields, got {len(row)}")
            rel, label = row[0].strip(), row[1].strip()
            if label not in ("0", "1"):
                raise DatasetError(f"{path}:{lineno}: label {label!r} for {rel} is not 0 or 1")
            img_path = (path.parent / rel).resolve()
            if img_path in seen:
                raise DatasetError(f"{path}:{lineno}: duplicate path {rel}")
            seen.add(img_path)
            rows.append((img_path, int(label)))
    return rows


def load_dataset(manifest) -> List[Tuple[np.ndarray, int]]:
    """Decode every manifest row into an ``(image in [0, 1], label)`` pair, in order."""
    out = []
    for lineno, (img_path, label) in enumerate(read_manifest(manifest), start=2):
        try:
            img = read_image(img_path)
        except DatasetError as exc:
            raise DatasetError(f"{manifest}:{lineno}: {exc}") from exc
        out.append((img, label))
    return out


def write_manifest(path, rows):
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "label"])
        for p, label in rows:
            w.writerow([Path(p).as_posix(), int(label)])


def load_atlas(directory) -> List[AtlasEntry]:
    """Pairs ``name.png`` with ``name_mask.png`` (or ``.pgm``), sorted by name."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DatasetError(f"{directory}: atlas directory not found")
    entries = []
    for img_path in sorted(directory.iterdir()):
        if img_path.suffix.lower() not in IMAGE_SUFFIXES or img_path.stem.endswith("_mask"):
            continue
        masks = [img_path.with_name(img_path.stem + "_mask" + s) for s in IMAGE_SUFFIXES]
        mask_path = next((m for m in masks if m.exists()), None)
        if mask_path is None:
            raise DatasetError(f"{img_path}: no matching _mask file")
        entries.append(AtlasEntry(read_image(img_path), read_mask(mask_path)))
    if not entries:
        raise DatasetError(f"{directory}: atlas is empty")
    return entries


# -- checkpoints ------------------------------------------------------------

def save_checkpoint(path, m: ModelParams, dtype: str = "f64"):
    if dtype not in DTYPES:
        raise CheckpointError(f"unsupported dtype {dtype!r}")
    payload = bytearray()
    tensors = []
    for name in sorted(m.params):
        raw = np.ascontiguousarray(m.params[name], dtype=DTYPES[dtype]).tobytes()
        tensors.append({"name": name, "dtype": dtype, "shape": list(m.params[name].shape),
                        "offset": len(payload), "length": len(raw)})
        payload += raw
    arch = asdict(m.arch)
    directory = {
        "arch": arch,
        "freeze_extractor": m.freeze_extractor,
        "gate_order": GATE_ORDER,
        "tensors": tensors,
    }
    text = json.dumps(directory, sort_keys=True, separators=(",", ":")).encode("utf-8")
    Path(path).write_bytes(MAGIC + struct.pack("<II", VERSION, len(text)) + text + bytes(payload))


def load_checkpoint(path) -> ModelParams:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"{path}: checkpoint not found")
    data = path.read_bytes()
    if len(data) < 12 or data[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic bytes")
    version, dir_len = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    try:
        directory = json.loads(data[12:12 + dir_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable directory") from exc
    if directory.get("gate_order") != GATE_ORDER:
        raise CheckpointError(f"{path}: gate order {directory.get('gate_order')!r} != {GATE_ORDER!r}")
    a = directory["arch"]
    arch = Architecture(a["input_size"], tuple(tuple(b) for b in a["blocks"]), tuple(a["lstm_hidden"]),
                        a["n_classes"], a["name"])
    payload = memoryview(data)[12 + dir_len:]
    params = {}
    for t in directory["tensors"]:
        dt = DTYPES[t["dtype"]]
        chunk = payload[t["offset"]:t["offset"] + t["length"]]
        if len(chunk) != t["length"] or t["length"] != dt.itemsize * int(np.prod(t["shape"])):
            raise CheckpointError(f"{path}: tensor {t['name']} is truncated or mis-sized")
        params[t["name"]] = np.frombuffer(chunk, dtype=dt).astype(dt.newbyteorder("="), copy=True).reshape(t["shape"])
    expected = set(_expected_names(arch))
    if set(params) != expected:
        missing, extra = expected - set(params), set(params) - expected
        raise CheckpointError(f"{path}: tensor names disagree (missing {sorted(missing)}, extra {sorted(extra)})")
    return ModelParams(arch, params, bool(directory["freeze_extractor"]))


def _expected_names(arch: Architecture):
    for name in arch.conv_names():
        yield name + ".weights"
        yield name + ".bias"
    for name in arch.bilstm_names():
        for direction in ("forward", "backward"):
            for part in "WUb":
                yield f"{name}.{direction}.{part}"
    yield "dense.weights"
    yield "dense.bias"
