"""JSON files for models and families.

A model file holds ``H, S, A, O, mu, T, E, r`` with nested lists matching the
array layouts of :class:`~optenet.model.TabularModel`.  A family file holds
``{"true_index": i, "candidates": [model, ...]}``.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .model import InvalidModelError, ParameterFamily, TabularModel


def model_to_dict(m: TabularModel) -> dict:
    return {
        "H": m.H,
        "S": m.S,
        "A": m.A,
        "O": m.O,
        "mu": m.mu.tolist(),
        "T": m.T.tolist(),
        "E": m.E.tolist(),
        "r": m.r.tolist(),
    }


def model_from_dict(d: dict) -> TabularModel:
    try:
        H, S, A = int(d["H"]), int(d["S"]), int(d["A"])
        T = np.asarray(d["T"], dtype=float)
        if H == 1 and T.size == 0:
            T = np.zeros((0, S, S, A))
        m = TabularModel(mu=d["mu"], T=T, E=d["E"], r=d["r"])
    except KeyError as e:
        raise InvalidModelError(f"model file is missing field {e.args[0]!r}") from None
    for key in ("H", "S", "A", "O"):
        if int(d[key]) != getattr(m, key):
            raise InvalidModelError(f"declared {key} = {d[key]} disagrees with array shapes")
    return m


def family_to_dict(f: ParameterFamily) -> dict:
    return {"true_index": f.true_index, "candidates": [model_to_dict(c) for c in f.candidates]}


def family_from_dict(d: dict) -> ParameterFamily:
    if "candidates" not in d:
        return ParameterFamily((model_from_dict(d),), 0)
    return ParameterFamily(tuple(model_from_dict(c) for c in d["candidates"]), int(d.get("true_index", 0)))


def _read(path) -> dict:
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise InvalidModelError(f"{path}: line {e.lineno}, column {e.colno}: {e.msg}") from None


def load_model(path) -> TabularModel:
    return model_from_dict(_read(path))


def load_family(path) -> ParameterFamily:
    """A family file, or a single model file read as a one-candidate family."""
    return family_from_dict(_read(path))


def save_model(m: TabularModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(m), indent=1))


def save_family(f: ParameterFamily, path) -> None:
    Path(path).write_text(json.dumps(family_to_dict(f), indent=1))
