"""JSON experiment configuration (``"schema": 1``)."""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .model_core import LinkModel, Preprocessing, SignalSpec, builtin_model, builtin_preprocessing, make_signals

SCHEMA_VERSION = 1
TOP_LEVEL_KEYS = {
    "schema", "name", "model", "signals", "preprocessings", "deltas", "d", "trials", "seed",
    "eigensolver", "dense_cutoff", "random_frame", "quadrature", "threshold", "design", "oracle",
}


@dataclass
class Config:
    raw: dict
    text: str
    name: str
    model: LinkModel
    signals: SignalSpec
    preprocessings: list[Preprocessing]
    deltas: list[float]
    d: int
    trials: int
    seed: int
    eigensolver: str = "auto"
    dense_cutoff: int = 800
    random_frame: bool = False
    quadrature: dict = field(default_factory=dict)
    threshold: dict = field(default_factory=dict)
    design: dict = field(default_factory=dict)
    oracle: dict = field(default_factory=dict)

    @property
    def hash(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _line_of(text: str, key: str) -> int | None:
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _fail(text: str, key: str, msg: str):
    line = _line_of(text, key)
    where = f"line {line}: " if line else ""
    raise ConfigError(f"{where}{key}: {msg}")


def _params(entry: dict) -> dict:
    return {k: v for k, v in entry.items() if k != "name"}


def parse_config(text: str, overrides: dict | None = None) -> Config:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("line 1: top level must be a JSON object")
    for k, v in (overrides or {}).items():
        if v is not None:
            raw[k] = v
    if raw.get("schema") != SCHEMA_VERSION:
        _fail(text, "schema", f"expected {SCHEMA_VERSION}, got {raw.get('schema')!r}")
    unknown = sorted(set(raw) - TOP_LEVEL_KEYS)
    if unknown:
        _fail(text, unknown[0], "unknown key")

    model_entry = raw.get("model")
    if not isinstance(model_entry, dict) or "name" not in model_entry:
        _fail(text, "model", "must be an object with a 'name'")
    try:
        model = builtin_model(model_entry["name"], **_params(model_entry))
    except (ValueError, TypeError) as exc:
        _fail(text, "model", str(exc))

    sig = raw.get("signals", {"kind": "orthonormal"})
    try:
        signals = make_signals(int(sig.get("p", model.p)), sig.get("kind", "orthonormal"),
                               float(sig.get("rho", 0.0)), sig.get("seed"))
    except Exception as exc:
        _fail(text, "signals", str(exc))
    if signals.p != model.p:
        _fail(text, "signals", f"p={signals.p} does not match the model's p={model.p}")

    pre_entries = raw.get("preprocessings", [])
    if not isinstance(pre_entries, list) or not pre_entries:
        _fail(text, "preprocessings", "must be a non-empty list")
    pres = []
    for entry in pre_entries:
        if isinstance(entry, str):
            entry = {"name": entry}
        try:
            pres.append(builtin_preprocessing(entry["name"], **_params(entry)))
        except Exception as exc:
            _fail(text, "preprocessings", f"{entry.get('name')!r}: {exc}")

    deltas = raw.get("deltas", [])
    if not isinstance(deltas, list) or not deltas:
        _fail(text, "deltas", "delta grid must be a non-empty list")
    if any(not isinstance(x, (int, float)) or x <= 0 for x in deltas):
        _fail(text, "deltas", "every delta must be a positive number")

    d = raw.get("d", 600)
    trials = raw.get("trials", 10)
    seed = raw.get("seed", 0)
    for key, val, lo in (("d", d, model.p + 1), ("trials", trials, 1), ("seed", seed, 0)):
        if not isinstance(val, int) or isinstance(val, bool) or val < lo:
            _fail(text, key, f"must be an integer >= {lo}")
    if seed >= 2**64:
        _fail(text, "seed", "must fit in 64 bits")
    solver = raw.get("eigensolver", "auto")
    if solver not in ("auto", "dense", "lanczos"):
        _fail(text, "eigensolver", "must be auto, dense or lanczos")
    return Config(raw=raw, text=text, name=raw.get("name", "experiment"), model=model, signals=signals,
                  preprocessings=pres, deltas=[float(x) for x in deltas], d=d, trials=trials, seed=seed,
                  eigensolver=solver, dense_cutoff=int(raw.get("dense_cutoff", 800)),
                  random_frame=bool(raw.get("random_frame", False)), quadrature=raw.get("quadrature", {}),
                  threshold=raw.get("threshold", {}), design=raw.get("design", {}), oracle=raw.get("oracle", {}))


def load_config(path: str | Path, overrides: dict | None = None) -> Config:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, overrides)
