"""Checkpoint format: one JSON header line, then raw little-endian f64 blocks.

The header records the format version, the seed the run was launched with,
the config hash, and an ordered parameter table (name, shape, frozen flag).
Arrays follow in exactly header order, each as plain `<f8` bytes. Loading
restores values *and* frozen flags, and refuses a mismatched config hash,
so an eval can never silently run a checkpoint under the wrong geometry.
"""

from __future__ import annotations

import json
from math import prod

import numpy as np

from egmf.errors import CheckpointError

FORMAT_VERSION = 1


def save_checkpoint(path, params, config_hash: str, rng_seed: int):
    """params: iterable of (name, float array, frozen flag), order preserved."""
    entries = [(str(n), np.asarray(a, dtype=np.float64), bool(f)) for n, a, f in params]
    header = {
        "format_version": FORMAT_VERSION,
        "config_hash": config_hash,
        "rng_seed": int(rng_seed),
        "params": [
            {"name": n, "shape": list(a.shape), "frozen": f} for n, a, f in entries
        ],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8"))
        fh.write(b"\n")
        for _, a, _ in entries:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns (header dict, name -> array dict); validates sizes exactly."""
    try:
        fh = open(path, "rb")
    except FileNotFoundError as exc:
        raise CheckpointError(f"checkpoint not found: {path}") from exc
    with fh:
        line = fh.readline()
        blob = fh.read()
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format_version {header.get('format_version')!r}, expected {FORMAT_VERSION}"
        )
    arrays = {}
    offset = 0
    for meta in header.get("params", []):
        shape = tuple(int(s) for s in meta["shape"])
        n = prod(shape) if shape else 1
        nbytes = 8 * n
        if offset + nbytes > len(blob):
            raise CheckpointError(
                f"{path}: truncated at parameter {meta['name']!r} "
                f"(need {nbytes} bytes past offset {offset}, have {len(blob) - offset})"
            )
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=offset).reshape(shape)
        arrays[meta["name"]] = arr.copy()
        offset += nbytes
    if offset != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - offset} trailing bytes after parameters")
    if len(arrays) != len(header.get("params", [])):
        raise CheckpointError(f"{path}: duplicate parameter names in header")
    return header, arrays


def save_module_checkpoint(path, module, config_hash: str, rng_seed: int):
    save_checkpoint(
        path,
        ((name, p.values, p.frozen) for name, p in module.named_parameters()),
        config_hash,
        rng_seed,
    )


def load_module_checkpoint(path, module, expected_config_hash: str | None = None):
    """Load values + frozen flags into module; returns the header."""
    header, arrays = load_checkpoint(path)
    if expected_config_hash is not None and header["config_hash"] != expected_config_hash:
        raise CheckpointError(
            f"{path}: checkpoint config hash {header['config_hash'][:12]}… does not match "
            f"the supplied config ({expected_config_hash[:12]}…); refusing to load"
        )
    module.load_state_arrays(arrays)
    frozen = {m["name"]: m["frozen"] for m in header["params"]}
    for name, p in module.named_parameters():
        if frozen.get(name, False):
            p.freeze()
        else:
            p.unfreeze()
    return header
