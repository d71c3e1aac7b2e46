"""On-disk formats: raw float32 volumes with a JSON header, extreme-point
files and model checkpoints.

A volume ``name.json`` holds the header; its payload is ``name.raw``, raw
little-endian float32 in x-fastest order.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .annotations import POINT_KEYS, ExtremePointSet
from .volume import Volume


class FormatError(ValueError):
    """A file does not follow its declared format."""


def _parse_json(path: Path) -> object:
    raw = path.read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise FormatError(f"{path}: not UTF-8 at byte {e.start}") from e
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        offset = len(text[:e.pos].encode("utf-8"))
        raise FormatError(f"{path}: malformed JSON at byte {offset}: {e.msg}") from e


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def _paths(path) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix in (".json", ".raw"):
        p = p.with_suffix("")
    return p.with_name(p.name + ".json"), p.with_name(p.name + ".raw")


def write_volume(path, vol: Volume) -> Path:
    header_path, payload_path = _paths(path)
    header = {
        "shape": list(vol.shape),
        "spacing": list(vol.spacing),
        "dtype": "f32le",
        "order": "x-fastest",
        "payload": payload_path.name,
    }
    header_path.parent.mkdir(parents=True, exist_ok=True)
    header_path.write_text(dump_json(header), encoding="utf-8")
    payload_path.write_bytes(np.ravel(vol.data, order="F").astype("<f4").tobytes())
    return header_path


def read_volume(path) -> Volume:
    header_path, payload_path = _paths(path)
    header = _parse_json(header_path)
    if not isinstance(header, dict):
        raise FormatError(f"{header_path}: header must be a JSON object")
    shape = header.get("shape")
    if (not isinstance(shape, list) or len(shape) != 3
            or not all(isinstance(n, int) and n > 0 for n in shape)):
        raise FormatError(f"{header_path}: shape must be three positive integers, got {shape!r}")
    if header.get("dtype") != "f32le" or header.get("order") != "x-fastest":
        raise FormatError(f"{header_path}: unsupported dtype/order {header.get('dtype')!r}/{header.get('order')!r}")
    spacing = header.get("spacing")
    if not isinstance(spacing, list) or len(spacing) != 3:
        raise FormatError(f"{header_path}: spacing must be three numbers, got {spacing!r}")
    if "payload" in header:
        payload_path = header_path.with_name(header["payload"])
    payload = payload_path.read_bytes()
    expected = 4 * shape[0] * shape[1] * shape[2]
    if len(payload) != expected:
        raise FormatError(f"{payload_path}: payload length mismatch ({len(payload)} bytes, expected {expected})")
    data = np.frombuffer(payload, dtype="<f4").reshape(shape, order="F")
    try:
        return Volume(data.astype(np.float32), tuple(spacing))
    except ValueError as e:
        raise FormatError(f"{header_path}: {e}") from e


def write_points(path, pts: ExtremePointSet) -> None:
    Path(path).write_text(dump_json(pts.to_dict()), encoding="utf-8")


def read_points(path) -> ExtremePointSet:
    path = Path(path)
    d = _parse_json(path)
    if not isinstance(d, dict) or set(d) != set(POINT_KEYS):
        raise FormatError(f"{path}: expected exactly the keys {', '.join(POINT_KEYS)}")
    for k in POINT_KEYS:
        v = d[k]
        if not (isinstance(v, list) and len(v) == 3 and all(isinstance(c, int) for c in v)):
            raise FormatError(f"{path}: {k} must be an integer triple, got {v!r}")
    try:
        return ExtremePointSet.from_dict(d)
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from e


def write_checkpoint(path, model, cfg, best_val_loss: float | None = None) -> None:
    """Weights, bias and the config that produced them, as UTF-8 JSON.

    ``json`` writes floats with ``repr`` so values round-trip exactly.
    """
    doc = {"model": model.to_dict(), "config": cfg.to_dict()}
    if best_val_loss is not None:
        doc["best_val_loss"] = best_val_loss
    Path(path).write_text(dump_json(doc), encoding="utf-8")


def read_checkpoint(path):
    from .trainer import ToyModel, TrainConfig

    path = Path(path)
    d = _parse_json(path)
    if not isinstance(d, dict) or "model" not in d or "config" not in d:
        raise FormatError(f"{path}: checkpoint needs 'model' and 'config' entries")
    try:
        return ToyModel.from_dict(d["model"]), TrainConfig.from_dict(d["config"])
    except (TypeError, ValueError, KeyError) as e:
        raise FormatError(f"{path}: {e}") from e
