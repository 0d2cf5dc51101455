"""File-format tests: schemas, CSV round trips, canonical serialization."""

import json

import numpy as np
import pytest

from auditopt import io as aio
from auditopt.errors import InvalidInput
from auditopt.likelihood import Dataset, Record

from helpers import binary_spec, binary_theta, draw_arrays, with_z_spec, with_z_theta


def strata_doc():
    return {"strata": [
        {"ystar": ys, "xstar": xs, "z": 0, "count": c}
        for (ys, xs), c in zip([(0, 0), (0, 1), (1, 0), (1, 1)], (5297, 1130, 2655, 918))
    ]}


def params_doc():
    spec, theta = with_z_spec(), with_z_theta()
    return {"model": spec.to_json_dict(), "theta": theta.to_json_dict()}


class TestDocuments:
    def test_strata_document_parses(self):
        table = aio.strata_from_document(strata_doc())
        assert table.total == 10000

    def test_strata_document_rejects_malformed(self):
        with pytest.raises(InvalidInput):
            aio.strata_from_document({"strata": [{"ystar": 2, "xstar": 0, "z": 0, "count": 1}]})
        with pytest.raises(InvalidInput):
            aio.strata_from_document({"wrong": []})

    def test_params_document_round_trip(self):
        spec, theta = aio.params_from_document(params_doc())
        assert spec == with_z_spec()
        np.testing.assert_allclose(theta.to_flat(), with_z_theta().to_flat())

    def test_params_document_rejects_block_mismatch(self):
        doc = params_doc()
        doc["theta"]["eta_xstar"] = [0.0]
        with pytest.raises(InvalidInput):
            aio.params_from_document(doc)

    def test_canonical_bytes_stable(self):
        doc = {"b": 1, "a": [1, 2], "c": {"y": 0.5, "x": None}}
        assert aio.canonical_json_bytes(doc) == aio.canonical_json_bytes(json.loads(
            aio.canonical_json_bytes(doc)))

    def test_design_document_validates(self):
        from auditopt.information import Design

        table = aio.strata_from_document(strata_doc())
        design = Design(allocation=(10, 115, 85, 190), strata=table)
        doc = aio.design_document(design, None, "bccstar", None, 400, None)
        aio.validate_document(doc, "design_output")


class TestDatasetCsv:
    def test_round_trip(self, tmp_path):
        spec, theta = binary_spec(), binary_theta()
        rng = np.random.default_rng(0)
        ystar, xstar, y, x, z = draw_arrays(theta, spec, 60, rng)
        v = (rng.random(60) < 0.5).astype(np.int8)
        data = Dataset.from_arrays(v, ystar, xstar, y, x, z, spec)
        path = tmp_path / "d.csv"
        aio.dataset_to_csv(data, path)
        back = aio.dataset_from_csv(path, spec)
        np.testing.assert_array_equal(back.v, data.v)
        np.testing.assert_array_equal(back.y, data.y)
        np.testing.assert_array_equal(back.x, data.x)
        np.testing.assert_array_equal(back.z, data.z)

    def test_unvalidated_rows_leave_truth_empty(self, tmp_path):
        spec = binary_spec()
        data = Dataset([Record(0, 1, 0, 0), Record(1, 0, 1, 0, 1, 0)], spec)
        path = tmp_path / "d.csv"
        aio.dataset_to_csv(data, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "v,ystar,xstar,y,x,z"
        assert lines[1] == "0,1,0,,,0"
        assert lines[2] == "1,0,1,1,0,0"

    def test_rejects_truth_on_unvalidated_rows(self):
        spec = binary_spec()
        text = "v,ystar,xstar,y,x,z\n0,1,0,1,,0\n"
        with pytest.raises(InvalidInput):
            aio.dataset_from_csv_text(text, spec)

    def test_level_codes_sidecar(self):
        spec = with_z_spec()
        text = "v,ystar,xstar,y,x,z\n1,1,0,1,0,site-a\n1,0,1,0,1,site-b\n"
        data = aio.dataset_from_csv_text(text, spec, level_codes={"site-a": 0, "site-b": 1})
        np.testing.assert_array_equal(data.z, [0, 1])

    def test_unknown_code_rejected(self):
        spec = with_z_spec()
        text = "v,ystar,xstar,y,x,z\n1,1,0,1,0,site-c\n"
        with pytest.raises(InvalidInput):
            aio.dataset_from_csv_text(text, spec, level_codes={"site-a": 0})


class TestSimulationCsv:
    def test_metrics_csv_layout(self, tmp_path):
        from auditopt.simulate import MetricsRow

        rows = [MetricsRow("srs", 1.5, 0.4, 0.8, 0.9, 2, 98)]
        path = tmp_path / "m.csv"
        aio.metrics_to_csv(rows, path)
        text = path.read_text().strip().splitlines()
        assert text[0] == "design,pct_bias,se,re,ri,failures,used"
        assert text[1].startswith("srs,1.5,0.4,0.8,0.9,2,98")

    def test_estimates_csv_blank_for_failures(self, tmp_path):
        est = {"srs": np.array([0.31, np.nan, 0.29])}
        path = tmp_path / "e.csv"
        aio.estimates_to_csv(est, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "replicate,srs"
        assert lines[2] == "1,"
