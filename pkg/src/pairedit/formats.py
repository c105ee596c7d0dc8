"""On-disk formats: PFT1 tensors, PFCK checkpoints, PFDS datasets, key=value configs, PGM images.

PFT1   b"PFT1" | u32 rank | u32 dims[rank] | f64 payload (little endian, row-major)
PFCK   b"PFCK" | u32 version | u32 manifest_len | manifest (UTF-8 JSON) | PFT1 tensors in
       the order of ``manifest["tensors"]``
PFDS   same layout as PFCK with magic b"PFDS"; tensors x0A, x0B, g

All files are written to a temporary sibling and renamed into place.
"""

from __future__ import annotations

import io
import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Any, BinaryIO, Mapping

import numpy as np

from pairedit.datagen import PairSet, PairSpec
from pairedit.netmodel import DenoiserParams, Linear, LoraAdapter

FORMAT_VERSION = 1


class FormatError(ValueError):
    pass


def atomic_write(path: str | os.PathLike, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_tensor(fh: BinaryIO, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    fh.write(b"PFT1")
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.tobytes(order="C"))


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError("unexpected end of file")
    return data


def read_tensor(fh: BinaryIO) -> np.ndarray:
    if _read_exact(fh, 4) != b"PFT1":
        raise FormatError("bad tensor magic")
    (rank,) = struct.unpack("<I", _read_exact(fh, 4))
    dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank))
    count = int(np.prod(dims)) if rank else 1
    arr = np.frombuffer(_read_exact(fh, 8 * count), dtype="<f8").astype(np.float64)
    return arr.reshape(dims)


def tensor_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    write_tensor(buf, arr)
    return buf.getvalue()


def save_tensor(path, arr: np.ndarray) -> None:
    atomic_write(path, tensor_bytes(arr))


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_tensor(fh)


def _container_bytes(magic: bytes, manifest: Mapping[str, Any], tensors: list[np.ndarray]) -> bytes:
    body = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf = io.BytesIO()
    buf.write(magic)
    buf.write(struct.pack("<II", FORMAT_VERSION, len(body)))
    buf.write(body)
    for t in tensors:
        write_tensor(buf, t)
    return buf.getvalue()


def _read_container(path, magic: bytes) -> tuple[dict, list[np.ndarray]]:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != magic:
            raise FormatError(f"{path}: expected {magic.decode()} file")
        version, n = struct.unpack("<II", _read_exact(fh, 8))
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        manifest = json.loads(_read_exact(fh, n).decode("utf-8"))
        tensors = [read_tensor(fh) for _ in manifest["tensors"]]
    return manifest, tensors


def save_base(path, base: DenoiserParams, seed: int | None = None, extra: Mapping[str, Any] | None = None) -> None:
    names, tensors = [], []
    for i, layer in enumerate(base.layers):
        names += [f"W{i}", f"b{i}"]
        tensors += [layer.W, layer.b]
    manifest = {"kind": "base", "shapes": [list(s) for s in base.shapes], "n_freq": base.n_freq,
                "seed": seed, "tensors": names, **(extra or {})}
    atomic_write(path, _container_bytes(b"PFCK", manifest, tensors))


def save_adapter(path, adapter: LoraAdapter, seed: int | None = None, extra: Mapping[str, Any] | None = None) -> None:
    n = len(adapter.A)
    names = [f"A{i}" for i in range(n)] + [f"B{i}" for i in range(n)]
    manifest = {"kind": "lora", "rank": adapter.rank, "scale": adapter.scale,
                "shapes": [[b.shape[0], a.shape[1]] for a, b in zip(adapter.A, adapter.B)],
                "seed": seed, "tensors": names, **(extra or {})}
    atomic_write(path, _container_bytes(b"PFCK", manifest, adapter.params()))


def load_checkpoint(path) -> tuple[dict, DenoiserParams | LoraAdapter]:
    manifest, tensors = _read_container(path, b"PFCK")
    if manifest["kind"] == "base":
        layers = tuple(Linear(tensors[2 * i], tensors[2 * i + 1]) for i in range(len(tensors) // 2))
        return manifest, DenoiserParams(layers, int(manifest["n_freq"]))
    if manifest["kind"] == "lora":
        n = len(tensors) // 2
        return manifest, LoraAdapter(tensors[:n], tensors[n:], float(manifest["scale"]))
    raise FormatError(f"{path}: unknown checkpoint kind {manifest['kind']!r}")


def load_base(path) -> DenoiserParams:
    _, obj = load_checkpoint(path)
    if not isinstance(obj, DenoiserParams):
        raise FormatError(f"{path} is not a base checkpoint")
    return obj


def load_adapter(path) -> LoraAdapter:
    _, obj = load_checkpoint(path)
    if not isinstance(obj, LoraAdapter):
        raise FormatError(f"{path} is not an adapter checkpoint")
    return obj


def save_pairs(path, pairs: PairSet) -> None:
    g = pairs.g if pairs.g is not None else np.zeros(pairs.x0A.shape[1])
    manifest = {"kind": "pairs", "spec": pairs.spec.to_mapping(), "g_defined": pairs.g is not None,
                "generator": "pairedit.datagen.make_pairs", "tensors": ["x0A", "x0B", "g"]}
    atomic_write(path, _container_bytes(b"PFDS", manifest, [pairs.x0A, pairs.x0B, g]))


def load_pairs(path) -> PairSet:
    manifest, (x0A, x0B, g) = _read_container(path, b"PFDS")
    spec = PairSpec.from_mapping(manifest["spec"])
    return PairSet(x0A, x0B, g if manifest["g_defined"] else None, spec)


def parse_kv(text: str) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"line {n}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def read_kv(path) -> dict[str, str]:
    return parse_kv(Path(path).read_text(encoding="utf-8"))


def write_kv(path, values: Mapping[str, Any]) -> None:
    lines = []
    for k, v in values.items():
        if isinstance(v, (tuple, list)):
            v = ",".join(str(x) for x in v)
        lines.append(f"{k}={'' if v is None else v}")
    atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


def pgm_bytes(image: np.ndarray) -> bytes:
    """Binary P5 greymap; values are clamped to [0, 1] and scaled to 0..255."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise FormatError("PGM needs a 2-D image")
    h, w = image.shape
    pixels = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()


def save_pgm(path, image: np.ndarray) -> None:
    atomic_write(path, pgm_bytes(image))


def image_grid(images: np.ndarray, height: int, width: int, cols: int | None = None, pad: int = 1) -> np.ndarray:
    """Tile flat images into one 2-D array for PGM output."""
    images = np.atleast_2d(images).reshape(-1, height, width)
    n = images.shape[0]
    cols = cols or n
    rows = (n + cols - 1) // cols
    grid = np.ones((rows * (height + pad) - pad, cols * (width + pad) - pad))
    for i, img in enumerate(images):
        r, c = divmod(i, cols)
        grid[r * (height + pad):r * (height + pad) + height, c * (width + pad):c * (width + pad) + width] = img
    return grid
