"""JSON checkpoints: config snapshot, parameters, optimizer/schedule/PRNG state.

Parameter values are written as fixed-width decimals with 17 significant
digits (``' .16e'`` format: a leading space stands in for the plus sign), so
they round-trip exactly and every value costs the same number of bytes.
"""
from __future__ import annotations

import json
import math
import time
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .config import ExperimentConfig
from .errors import ValidationError
from .model import BicephConfig, BicephNet, PlateauSchedule, TrainerState, make_optimizer

FORMAT_VERSION = 1
VALUE_BYTES = 23  # width of one ' .16e' value
BYTES_PER_VALUE = VALUE_BYTES + 1  # plus the separating comma


def _encode(values) -> str:
    return "[" + ",".join(f"{v: .16e}" for v in np.asarray(values, dtype=np.float64).ravel()) + "]"


def _array_entry(arr, placeholders: list, empty: bool) -> dict:
    arr = np.asarray(arr, dtype=np.float64)
    key = f"@@ARRAY{len(placeholders)}@@"
    placeholders.append((key, "[]" if empty else _encode(arr)))
    return {"shape": list(arr.shape), "values": key}


def checkpoint_json(config: ExperimentConfig, net: BicephNet, state: TrainerState, created=None, empty=False) -> str:
    """Serialize to a JSON string. ``empty=True`` writes every array as ``[]`` (envelope measurement)."""
    arrays = []
    params = {k: _array_entry(w, arrays, empty) for k, w in net.parameters().items()}
    opt = state.optimizer.state_dict()
    for slot in ("m", "v"):
        if slot in opt:
            opt[slot] = {k: _array_entry(opt[slot][k], arrays, empty) for k in sorted(opt[slot])}
    sched = state.schedule.state_dict()
    sched["best"] = None if math.isinf(sched["best"]) else sched["best"]
    doc = {
        "format_version": FORMAT_VERSION,
        "created": created if created is not None else time.strftime("%Y-%m-%dT%H:%M:%S"),
        "config": config.to_dict(),
        "model": net.config.to_dict(),
        "epoch": state.epoch,
        "schedule": sched,
        "best_val": None if math.isinf(state.best_val) else state.best_val,
        "optimizer": opt,
        "rng": {"sample": rngmod.get_state(state.sample_rng)},
        "parameters": params,
    }
    text = json.dumps(doc, indent=1)
    for key, encoded in arrays:
        text = text.replace(f'"{key}"', encoded, 1)
    return text + "\n"


def save_checkpoint(path, config, net, state, created=None) -> None:
    Path(path).write_text(checkpoint_json(config, net, state, created))


def _decode(entry) -> np.ndarray:
    arr = np.array(entry["values"], dtype=np.float64)
    return arr.reshape(entry["shape"])


def load_checkpoint(path):
    """Returns ``(config, net, state)`` ready to evaluate or resume training."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not a valid checkpoint ({exc})") from None
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint version {doc.get('format_version')!r}")
    config = ExperimentConfig.from_dict(doc["config"])
    net = BicephNet(BicephConfig.from_dict(doc["model"]), seed=None)
    layers = net.layers()
    if set(layers) != set(doc["parameters"]):
        raise ValidationError(f"{path}: parameter names do not match the model")
    for k, layer in layers.items():
        w = _decode(doc["parameters"][k])
        if w.shape != layer.weights.shape:
            raise ValidationError(f"{path}: {k} has shape {w.shape}, expected {layer.weights.shape}")
        layer.weights[...] = w
    optimizer = make_optimizer(doc["optimizer"]["name"])
    opt = dict(doc["optimizer"])
    for slot in ("m", "v"):
        if slot in opt:
            opt[slot] = {k: _decode(e) for k, e in opt[slot].items()}
    optimizer.load_state_dict(opt)
    sched = PlateauSchedule(config.train.learning_rate, config.train.lr_factor, config.train.patience)
    s = dict(doc["schedule"])
    s["best"] = math.inf if s["best"] is None else s["best"]
    sched.load_state_dict(s)
    sample_rng = rngmod.stream(config.seed, "sample")
    rngmod.set_state(sample_rng, doc["rng"]["sample"])
    state = TrainerState(
        epoch=int(doc["epoch"]),
        schedule=sched,
        optimizer=optimizer,
        sample_rng=sample_rng,
        best_val=math.inf if doc["best_val"] is None else float(doc["best_val"]),
    )
    return config, net, state


def stored_arrays(net, state) -> list:
    """Every numeric array a checkpoint of (net, state) will contain."""
    out = list(net.parameters().values())
    opt = state.optimizer.state_dict()
    for slot in ("m", "v"):
        out += list(opt.get(slot, {}).values())
    return out


def envelope_bytes(config, net, state) -> int:
    """Size of a checkpoint with every numeric array emptied."""
    return len(checkpoint_json(config, net, state, created="0000-00-00T00:00:00", empty=True).encode())


def estimate_checkpoint_bytes(config, net, state) -> int:
    """Predicted file size: envelope plus fixed-width values (n values and n - 1 commas per array)."""
    arrays = [a for a in stored_arrays(net, state) if a.size]
    return envelope_bytes(config, net, state) + sum(a.size * BYTES_PER_VALUE - 1 for a in arrays)
