"""File formats: model descriptions, record archives, result tables.

Three formats, all plain text and deterministic byte for byte:

* model files are JSON with a kind tag and keyword parameters; complex
  matrices are encoded entrywise as [real, imag] pairs;
* record archives are JSON Lines: a metadata object first (carrying the
  SHA-256 of the canonical model JSON so archives and models can be
  cross-checked), then one object per record;
* results are CSV with a fixed column schema, plus a JSON sidecar that
  stores each reconstructed state in full.

Determinism matters because reruns are compared byte for byte: all JSON
is emitted with sorted keys and fixed separators, and floats use their
shortest round-trip representation.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from typing import Mapping, Sequence

import numpy as np

from .config import DEFAULT, Tolerances
from .continuous import ContinuousRecord, SMEModel
from .filtering import DiscreteRecord
from .models import (
    build_fluorescence_model,
    build_qnd_family,
    injection_channel,
    povm_family,
)
from .operators import DensityMatrix, KrausFamily

__all__ = [
    "matrix_to_json",
    "matrix_from_json",
    "canonical_json",
    "model_hash",
    "save_model",
    "load_model",
    "instantiate_model",
    "initial_state",
    "interventions_from_description",
    "write_records",
    "read_records",
    "validate_records",
    "RESULT_COLUMNS",
    "RESULTS_SCHEMA",
    "write_results_csv",
    "write_json",
]

RECORDS_FORMAT = "trajtomo-records"
MODEL_FORMAT = "trajtomo-model"
FORMAT_VERSION = 1

RESULT_COLUMNS = (
    "t",
    "observable",
    "mean",
    "sigma",
    "lo95",
    "hi95",
    "rank",
    "lambda",
    "kkt_residual",
)


def matrix_to_json(mat) -> list:
    """Nested lists of [real, imag] pairs for a complex matrix."""
    m = np.asarray(mat, dtype=complex)
    return [[[float(x.real), float(x.imag)] for x in row] for row in m]


def matrix_from_json(obj) -> np.ndarray:
    try:
        arr = np.asarray(obj, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"malformed matrix encoding: {exc}") from None
    if arr.ndim != 3 or arr.shape[2] != 2:
        raise ValueError(
            "matrix encoding must be rows of [real, imag] pairs, got shape "
            f"{arr.shape}"
        )
    return arr[..., 0] + 1j * arr[..., 1]


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True)


def model_hash(description: Mapping) -> str:
    return hashlib.sha256(canonical_json(description).encode()).hexdigest()


def save_model(path, kind: str, parameters: Mapping, **extras) -> dict:
    """Write a model description file; returns the description written."""
    desc = {
        "format": MODEL_FORMAT,
        "version": FORMAT_VERSION,
        "kind": str(kind),
        "parameters": dict(parameters),
        **extras,
    }
    with open(path, "w") as fh:
        fh.write(canonical_json(desc))
        fh.write("\n")
    return desc


def load_model(path) -> dict:
    with open(path) as fh:
        desc = json.load(fh)
    if not isinstance(desc, dict) or desc.get("format") != MODEL_FORMAT:
        raise ValueError(f"{path} is not a model description file")
    if desc.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {desc.get('version')!r}")
    if "kind" not in desc or "parameters" not in desc:
        raise ValueError("model description needs 'kind' and 'parameters'")
    return desc


def instantiate_model(description: Mapping, *, tol: Tolerances = DEFAULT):
    """Build the model object a description denotes.

    Returns an SMEModel for continuous kinds and a KrausFamily for
    discrete kinds.
    """
    kind = description["kind"]
    params = dict(description["parameters"])
    if kind == "fluorescence":
        return build_fluorescence_model(**params)
    if kind == "qnd":
        if "phase_offsets" in params:
            params["phase_offsets"] = tuple(params["phase_offsets"])
        n_steps = params.pop("n_steps")
        return build_qnd_family(n_steps, tol=tol, **params)
    if kind == "povm":
        elements = {
            str(y): matrix_from_json(f) for y, f in params["elements"].items()
        }
        return povm_family(elements, n_steps=int(params.get("n_steps", 1)), tol=tol)
    raise ValueError(f"unknown model kind {kind!r}")


def initial_state(description: Mapping, model, *, tol: Tolerances = DEFAULT):
    """The preparation a description declares, or maximally mixed."""
    dim = model.dim
    enc = description.get("initial_state")
    if enc is None:
        return DensityMatrix(np.eye(dim) / dim, tol=tol)
    mat = matrix_from_json(enc)
    if mat.shape != (dim, dim):
        raise ValueError(
            f"initial state has shape {mat.shape}, model dimension is {dim}"
        )
    return DensityMatrix(mat, tol=tol)


def interventions_from_description(
    description: Mapping, model, *, tol: Tolerances = DEFAULT
) -> dict[int, np.ndarray]:
    """State-preparation events declared in a model description.

    Each entry {"step": t, "kind": "injection", ...} becomes a channel
    superoperator applied before step t during simulation.  Only
    discrete models support interventions.
    """
    events = description.get("interventions", ())
    if not events:
        return {}
    if not isinstance(model, KrausFamily):
        raise ValueError("interventions are only supported for discrete models")
    out: dict[int, np.ndarray] = {}
    for ev in events:
        step = int(ev["step"])
        kind = ev.get("kind", "injection")
        if kind != "injection":
            raise ValueError(f"unknown intervention kind {kind!r}")
        kwargs = {
            k: float(ev[k]) for k in ("n_hot", "strength") if k in ev
        }
        out[step] = injection_channel(model.dim, tol=tol, **kwargs)
    return out


# ---------------------------------------------------------------------------
# record archives
# ---------------------------------------------------------------------------


def write_records(
    path,
    records: Sequence,
    *,
    model_description: Mapping | None = None,
    metadata: Mapping | None = None,
) -> dict:
    """Write records as JSON Lines with a leading metadata object."""
    records = list(records)
    if not records:
        raise ValueError("refusing to write an empty record archive")
    if isinstance(records[0], DiscreteRecord):
        record_type = "discrete"
    elif isinstance(records[0], ContinuousRecord):
        record_type = "continuous"
    else:
        raise TypeError(f"cannot archive records of type {type(records[0]).__name__}")
    meta = {
        "format": RECORDS_FORMAT,
        "version": FORMAT_VERSION,
        "record_type": record_type,
        "n_records": len(records),
    }
    if model_description is not None:
        meta["model_hash"] = model_hash(model_description)
        meta["model"] = dict(model_description)
    if metadata:
        meta.update(metadata)
    with open(path, "w") as fh:
        fh.write(canonical_json(meta))
        fh.write("\n")
        for rec in records:
            if record_type == "discrete":
                line = {"id": rec.id, "outcomes": list(rec.outcomes)}
            else:
                line = {
                    "id": rec.id,
                    "dt": rec.dt,
                    "increments": rec.increments.tolist(),
                }
            fh.write(canonical_json(line))
            fh.write("\n")
    return meta


def read_records(path) -> tuple[dict, list]:
    """Read a record archive; returns (metadata, records)."""
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"{path} is empty")
    meta = json.loads(lines[0])
    if not isinstance(meta, dict) or meta.get("format") != RECORDS_FORMAT:
        raise ValueError(f"{path} is not a record archive")
    if meta.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported record format version {meta.get('version')!r}")
    record_type = meta.get("record_type")
    if record_type not in ("discrete", "continuous"):
        raise ValueError(f"unknown record type {record_type!r}")
    records = []
    for ln in lines[1:]:
        obj = json.loads(ln)
        if record_type == "discrete":
            records.append(DiscreteRecord(int(obj["id"]), tuple(obj["outcomes"])))
        else:
            records.append(
                ContinuousRecord(
                    int(obj["id"]),
                    float(obj["dt"]),
                    np.asarray(obj["increments"], float),
                )
            )
    declared = meta.get("n_records")
    if declared is not None and declared != len(records):
        raise ValueError(
            f"archive declares {declared} records but contains {len(records)}"
        )
    return meta, records


def validate_records(
    model_description: Mapping, model, metadata: Mapping, records: Sequence
) -> list[str]:
    """Semantic cross-checks between an archive and a model.

    Returns human-readable problem strings; an empty list means the
    archive is consistent with the model.
    """
    problems: list[str] = []
    declared = metadata.get("model_hash")
    actual = model_hash(model_description)
    if declared is not None and declared != actual:
        problems.append(
            f"archive was produced from a different model (hash {declared[:12]}.. "
            f"!= {actual[:12]}..)"
        )
    if isinstance(model, KrausFamily):
        if metadata.get("record_type") != "discrete":
            problems.append("discrete model but archive is not of discrete records")
            return problems
        for rec in records:
            if len(rec.outcomes) > model.n_steps:
                problems.append(
                    f"record {rec.id} has {len(rec.outcomes)} outcomes; the model "
                    f"defines {model.n_steps} steps"
                )
                continue
            for t, y in enumerate(rec.outcomes):
                if y not in model.outcomes(t):
                    problems.append(
                        f"record {rec.id} uses unknown outcome {y!r} at step {t}"
                    )
                    break
    elif isinstance(model, SMEModel):
        if metadata.get("record_type") != "continuous":
            problems.append("continuous model but archive is not of signal records")
            return problems
        n_mon = len(model.monitored)
        for rec in records:
            if not math.isclose(rec.dt, model.dt, rel_tol=1e-9, abs_tol=0.0):
                problems.append(
                    f"record {rec.id} was taken on a {rec.dt} s grid; the "
                    f"model steps by {model.dt} s"
                )
            elif rec.increments.shape[1] != n_mon:
                problems.append(
                    f"record {rec.id} carries {rec.increments.shape[1]} signal "
                    f"channels; the model monitors {n_mon}"
                )
            elif rec.increments.shape[0] > model.n_steps:
                problems.append(
                    f"record {rec.id} has {rec.increments.shape[0]} steps; the "
                    f"model defines {model.n_steps}"
                )
            elif not np.isfinite(rec.increments).all():
                problems.append(f"record {rec.id} contains non-finite increments")
    else:
        problems.append(f"unsupported model type {type(model).__name__}")
    return problems


# ---------------------------------------------------------------------------
# result tables
# ---------------------------------------------------------------------------


def _cell(value) -> str:
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return repr(value)
    return str(value)


RESULTS_SCHEMA = "# trajtomo-results v1"


def write_results_csv(path, rows: Sequence[Mapping]) -> None:
    """Write result rows under the fixed column schema.

    The first header line names the schema and its version so readers
    can reject tables written under a different layout; the second is
    the usual column header.
    """
    with open(path, "w", newline="") as fh:
        fh.write(RESULTS_SCHEMA + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESULT_COLUMNS)
        for row in rows:
            missing = [c for c in RESULT_COLUMNS if c not in row]
            if missing:
                raise ValueError(f"result row is missing columns {missing}")
            writer.writerow([_cell(row[c]) for c in RESULT_COLUMNS])


def write_json(path, payload: Mapping) -> None:
    with open(path, "w") as fh:
        fh.write(canonical_json(payload))
        fh.write("\n")
