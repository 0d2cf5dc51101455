"""File formats: JSON documents, dataset CSV, canonical serialization.

Every JSON document the CLI and service exchange is validated against a
schema shipped in ``schemas/`` and serialized canonically (sorted keys,
compact separators, trailing newline) so that identical inputs produce
byte-identical outputs across entry points.
"""

from __future__ import annotations

import csv
import io as _io
import json
from pathlib import Path

import jsonschema
import numpy as np

from .errors import InvalidInput
from .information import Design
from .likelihood import Dataset
from .model import ModelSpec, ParamVector, StratumTable
from .search import SearchTrace
from .simulate import MetricsRow, SimScenario

SCHEMA_DIR = Path(__file__).resolve().parent / "schemas"


def canonical_json_bytes(doc) -> bytes:
    return (json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False) + "\n").encode()


def load_schema(name: str) -> dict:
    with open(SCHEMA_DIR / f"{name}.schema.json", encoding="utf-8") as fh:
        return json.load(fh)


def validate_document(doc, schema_name: str):
    try:
        jsonschema.validate(doc, load_schema(schema_name))
    except jsonschema.ValidationError as exc:
        raise InvalidInput(f"{schema_name} document invalid: {exc.message}") from exc


def read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise InvalidInput(f"file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidInput(f"{path} is not valid JSON: {exc}") from exc


# ---------------------------------------------------------------------------
# Strata and parameter documents
# ---------------------------------------------------------------------------

def strata_from_document(doc: dict) -> StratumTable:
    validate_document(doc, "strata")
    return StratumTable.from_json_dict(doc)


def load_strata(path) -> StratumTable:
    return strata_from_document(read_json(path))


def params_from_document(doc: dict) -> tuple[ModelSpec, ParamVector]:
    """A params document bundles the model spec with a parameter vector."""
    validate_document(doc, "params")
    spec = ModelSpec.from_json_dict(doc["model"])
    theta = ParamVector.from_json_dict(doc["theta"])
    theta.validate(spec)
    return spec, theta


def load_params(path) -> tuple[ModelSpec, ParamVector]:
    return params_from_document(read_json(path))


def spec_from_document(doc: dict) -> tuple[ModelSpec, dict | None]:
    """Model-spec document with an optional z level-code dictionary."""
    validate_document(doc, "model_spec")
    spec = ModelSpec.from_json_dict(doc)
    codes = doc.get("level_codes")
    return spec, codes


def load_spec(path) -> tuple[ModelSpec, dict | None]:
    return spec_from_document(read_json(path))


def scenario_from_document(doc: dict) -> SimScenario:
    validate_document(doc, "scenario")
    return SimScenario.from_json_dict(doc)


def load_scenario(path) -> SimScenario:
    return scenario_from_document(read_json(path))


# ---------------------------------------------------------------------------
# Design output document
# ---------------------------------------------------------------------------

def design_document(design: Design, trace: SearchTrace | None, strategy: str,
                    seed: int | None, n: int, m: int | None) -> dict:
    return {
        "strategy": strategy,
        "n": n,
        "m": m,
        "seed": seed,
        "design": design.to_json_dict(),
        "trace": None if trace is None else trace.to_json_dict(),
    }


def write_design_document(path, doc: dict):
    validate_document(doc, "design_output")
    with open(path, "wb") as fh:
        fh.write(canonical_json_bytes(doc))


# ---------------------------------------------------------------------------
# Dataset CSV
# ---------------------------------------------------------------------------

CSV_HEADER = ["v", "ystar", "xstar", "y", "x", "z"]


def dataset_to_csv(data: Dataset, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for i in range(len(data)):
            v = int(data.v[i])
            writer.writerow([
                v, int(data.ystar[i]), int(data.xstar[i]),
                int(data.y[i]) if v else "", int(data.x[i]) if v else "",
                int(data.z[i]),
            ])


def dataset_from_csv_text(text: str, spec: ModelSpec, level_codes: dict | None = None) -> Dataset:
    reader = csv.reader(_io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise InvalidInput("empty dataset CSV") from None
    if [h.strip() for h in header] != CSV_HEADER:
        raise InvalidInput(f"dataset CSV header must be {','.join(CSV_HEADER)}")
    v, ystar, xstar, y, x, z = [], [], [], [], [], []

    def parse_binary(field, name, row_no):
        if field not in ("0", "1"):
            raise InvalidInput(f"row {row_no}: {name} must be 0 or 1, got {field!r}")
        return int(field)

    for row_no, row in enumerate(reader, start=2):
        if not row or all(f.strip() == "" for f in row):
            continue
        if len(row) != 6:
            raise InvalidInput(f"row {row_no}: expected 6 fields, got {len(row)}")
        row = [f.strip() for f in row]
        vi = parse_binary(row[0], "v", row_no)
        v.append(vi)
        ystar.append(parse_binary(row[1], "ystar", row_no))
        xstar.append(parse_binary(row[2], "xstar", row_no))
        if vi == 1:
            y.append(parse_binary(row[3], "y", row_no))
            x.append(parse_binary(row[4], "x", row_no))
        else:
            if row[3] or row[4]:
                raise InvalidInput(f"row {row_no}: unvalidated rows must leave y and x empty")
            y.append(-1)
            x.append(-1)
        zfield = row[5]
        if level_codes is not None and zfield in level_codes:
            z.append(int(level_codes[zfield]))
        else:
            try:
                z.append(int(zfield))
            except ValueError:
                raise InvalidInput(f"row {row_no}: unknown z code {zfield!r}") from None
    if not v:
        raise InvalidInput("dataset CSV has no records")
    return Dataset.from_arrays(np.array(v), np.array(ystar), np.array(xstar),
                               np.array(y), np.array(x), np.array(z), spec)


def dataset_from_csv(path, spec: ModelSpec, level_codes: dict | None = None) -> Dataset:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except FileNotFoundError as exc:
        raise InvalidInput(f"file not found: {path}") from exc
    return dataset_from_csv_text(text, spec, level_codes)


# ---------------------------------------------------------------------------
# Simulation outputs
# ---------------------------------------------------------------------------

def metrics_to_csv(rows: list[MetricsRow], path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["design", "pct_bias", "se", "re", "ri", "failures", "used"])
        for r in rows:
            writer.writerow([r.design, f"{r.pct_bias:.6g}", f"{r.se:.6g}",
                             f"{r.re:.6g}", f"{r.ri:.6g}", r.failures, r.used])


def estimates_to_csv(estimates: dict, path):
    names = list(estimates)
    length = len(next(iter(estimates.values()))) if names else 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["replicate"] + names)
        for r in range(length):
            row = [r]
            for name in names:
                val = estimates[name][r]
                row.append("" if not np.isfinite(val) else f"{val:.10g}")
            writer.writerow(row)
