"""JSON model files and CSV sequence files.

Model files are one JSON object keyed by ``"family"`` (``hmm``, ``lgssm``,
``ssm_continuous``, ``ssm_discrete``) with matrices as row-major nested
lists.  Sequence files have one row per time step: a single ``y`` integer
column for categorical data, otherwise ``y0..y{p-1}`` followed by optional
``x0..x{d-1}`` input columns.  Floats are written with ``repr`` so that a
write/read cycle is exact.
"""
from __future__ import annotations

import csv
import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .models import (
    CategoricalEmission,
    ContinuousSsmParams,
    DiscreteSsmParams,
    GaussianEmission,
    HmmParams,
    LgssmParams,
)

FAMILIES = ("hmm", "lgssm", "ssm_continuous", "ssm_discrete")


class ModelFileError(ValueError):
    """The file is not a well-formed model or sequence document."""


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _mat(a) -> list:
    return np.asarray(a, dtype=float).tolist()


def model_to_dict(params) -> dict:
    if isinstance(params, HmmParams):
        fam = params.emission_family
        if fam == "categorical":
            ems = [{"probs": _mat(e.probs)} for e in params.emissions]
        else:
            ems = [{"mean": _mat(e.mean), "cov": _mat(e.cov)} for e in params.emissions]
        return {"family": "hmm", "num_states": params.num_states, "emission_family": fam,
                "initial_dist": _mat(params.initial_dist), "transition": _mat(params.transition),
                "emissions": ems}
    if isinstance(params, LgssmParams):
        return {"family": "lgssm", "state_dim": params.state_dim, "input_dim": params.input_dim,
                "obs_dim": params.obs_dim,
                **{k: _mat(getattr(params, k))
                   for k in ("A", "B", "C", "Q", "R", "init_mean", "init_cov")}}
    if isinstance(params, ContinuousSsmParams):
        return {"family": "ssm_continuous", **{k: _mat(getattr(params, k)) for k in "ABCD"}}
    if isinstance(params, DiscreteSsmParams):
        return {"family": "ssm_discrete", "A_bar": _mat(params.A_bar), "B_bar": _mat(params.B_bar),
                "C": _mat(params.C), "step_size": params.step_size, "rule": params.rule}
    raise TypeError(f"cannot serialize {type(params).__name__}")


def _array(doc: dict, key: str, ndim: int, rows: Optional[int] = None) -> np.ndarray:
    if key not in doc:
        raise ModelFileError(f"missing field {key!r}")
    try:
        arr = np.array(doc[key], dtype=float)
    except (TypeError, ValueError) as exc:
        raise ModelFileError(f"field {key!r} is not a numeric array: {exc}") from None
    if arr.ndim == 1 and ndim == 2 and arr.size == 0 and rows is not None:
        arr = arr.reshape(rows, 0)
    if arr.ndim != ndim:
        raise ModelFileError(f"field {key!r} must be {ndim}-dimensional, got shape {arr.shape}")
    return arr


def model_from_dict(doc) -> object:
    if not isinstance(doc, dict):
        raise ModelFileError("model document must be a JSON object")
    fam = doc.get("family")
    try:
        if fam == "hmm":
            ems = doc.get("emissions")
            if not isinstance(ems, list) or not ems:
                raise ModelFileError("field 'emissions' must be a non-empty list")
            emissions = []
            for i, e in enumerate(ems):
                if not isinstance(e, dict):
                    raise ModelFileError(f"emission {i} must be an object")
                if "probs" in e:
                    emissions.append(CategoricalEmission(_array(e, "probs", 1)))
                elif "mean" in e:
                    emissions.append(GaussianEmission(_array(e, "mean", 1), _array(e, "cov", 2)))
                else:
                    raise ModelFileError(f"emission {i} needs 'probs' or 'mean'/'cov'")
            params = HmmParams(_array(doc, "initial_dist", 1), _array(doc, "transition", 2),
                               tuple(emissions))
            if "num_states" in doc and doc["num_states"] != params.num_states:
                raise ModelFileError("num_states disagrees with initial_dist length")
            return params
        if fam == "lgssm":
            A = _array(doc, "A", 2)
            return LgssmParams(A, _array(doc, "B", 2, rows=A.shape[0]), _array(doc, "C", 2),
                               _array(doc, "Q", 2), _array(doc, "R", 2),
                               _array(doc, "init_mean", 1), _array(doc, "init_cov", 2))
        if fam == "ssm_continuous":
            A = _array(doc, "A", 2)
            D = _array(doc, "D", 2, rows=len(doc.get("C", []))) if "D" in doc else None
            return ContinuousSsmParams(A, _array(doc, "B", 2, rows=A.shape[0]), _array(doc, "C", 2), D)
        if fam == "ssm_discrete":
            A = _array(doc, "A_bar", 2)
            step = doc.get("step_size")
            if step is not None and not isinstance(step, (int, float)):
                raise ModelFileError("step_size must be a number or null")
            return DiscreteSsmParams(A, _array(doc, "B_bar", 2, rows=A.shape[0]), _array(doc, "C", 2),
                                     step_size=step, rule=doc.get("rule"))
    except ModelFileError:
        raise
    except ValueError as exc:
        raise ModelFileError(str(exc)) from None
    raise ModelFileError(f"unknown model family {fam!r}; expected one of {FAMILIES}")


def dumps_model(params) -> str:
    return json.dumps(model_to_dict(params), indent=2) + "\n"


def save_model(params, path) -> None:
    atomic_write_text(path, dumps_model(params))


def load_model(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"{path}: invalid JSON ({exc})") from None
    return model_from_dict(doc)


# --------------------------------------------------------------------------
# CSV sequences
# --------------------------------------------------------------------------


@dataclass
class SequenceData:
    y: np.ndarray  # (T,) int for categorical, (T, p) float otherwise
    x: Optional[np.ndarray]  # (T, d) or None
    categorical: bool

    def __len__(self):
        return len(self.y)


def sequence_to_csv(y, x=None, categorical: bool = False) -> str:
    rows = []
    if categorical:
        y = np.asarray(y).reshape(-1)
        rows.append("y")
        rows += [str(int(v)) for v in y]
    else:
        y = np.asarray(y, dtype=float)
        y = y.reshape(len(y), -1)
        x = None if x is None else np.asarray(x, dtype=float).reshape(len(y), -1)
        header = [f"y{i}" for i in range(y.shape[1])]
        if x is not None:
            header += [f"x{i}" for i in range(x.shape[1])]
        rows.append(",".join(header))
        for k in range(len(y)):
            vals = list(y[k]) + ([] if x is None else list(x[k]))
            rows.append(",".join(repr(float(v)) for v in vals))
    return "\n".join(rows) + "\n"


def write_sequence_csv(path, y, x=None, categorical: bool = False) -> None:
    atomic_write_text(path, sequence_to_csv(y, x, categorical))


def write_table_csv(path, header: list, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(v if isinstance(v, str) else repr(v) if isinstance(v, float)
                              else str(v) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_table_csv(path) -> tuple[list, np.ndarray]:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ModelFileError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    try:
        data = np.array([[float(v) for v in r] for r in body], dtype=float)
    except ValueError as exc:
        raise ModelFileError(f"{path}: non-numeric cell ({exc})") from None
    return header, data.reshape(len(body), len(header))


def read_sequence_csv(path) -> SequenceData:
    with open(path, newline="") as fh:
        rows = [[c.strip() for c in r] for r in csv.reader(fh) if r]
    if not rows:
        raise ModelFileError(f"{path}: empty file")
    first = rows[0]
    try:
        [float(c) for c in first]
        header = None
    except ValueError:
        header = first
        rows = rows[1:]
    if header is None:
        width = len(first)
        integral = width == 1 and all(r[0].lstrip("+-").isdigit() for r in rows)
        header = ["y"] if integral else [f"y{i}" for i in range(width)]
    if any(len(r) != len(header) for r in rows):
        raise ModelFileError(f"{path}: ragged rows (expected {len(header)} columns)")
    if header == ["y"]:
        try:
            y = np.array([int(r[0]) for r in rows], dtype=np.int64)
        except ValueError:
            raise ModelFileError(f"{path}: categorical column must hold integers") from None
        return SequenceData(y, None, True)
    ycols = [i for i, h in enumerate(header) if h.startswith("y")]
    xcols = [i for i, h in enumerate(header) if h.startswith("x")]
    if len(ycols) + len(xcols) != len(header) or not ycols:
        raise ModelFileError(f"{path}: header must name y0..y(p-1) then x0..x(d-1), got {header}")
    if [header[i] for i in ycols] != [f"y{i}" for i in range(len(ycols))] or \
            [header[i] for i in xcols] != [f"x{i}" for i in range(len(xcols))]:
        raise ModelFileError(f"{path}: columns out of order: {header}")
    try:
        data = np.array([[float(c) for c in r] for r in rows], dtype=float).reshape(len(rows), len(header))
    except ValueError as exc:
        raise ModelFileError(f"{path}: non-numeric cell ({exc})") from None
    x = data[:, xcols] if xcols else None
    return SequenceData(data[:, ycols], x, False)
