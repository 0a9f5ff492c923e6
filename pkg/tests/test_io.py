"""Model interchange: canonical round trips and schema guards."""

import json
import os

import numpy as np
import pytest

from udlflow import io as model_io
from udlflow.classifiers import ReluClassifier
from udlflow.datasets import load_csv
from udlflow.errors import SchemaError, VersionError
from udlflow.flows import build_baseline, build_flow

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


def perturbed(shape=(3,), seed=0, **kw):
    flow = build_flow(shape, n_blocks=3, seed=seed, **kw)
    flow.perturb(np.random.default_rng(seed + 1), scale=0.5)
    return flow


class TestRoundTrip:
    def test_resave_is_byte_identical(self, tmp_path):
        flow = perturbed()
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        model_io.save(flow, p1)
        model_io.save(model_io.load(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    @pytest.mark.parametrize("maker", [
        lambda: perturbed((3,), 0),
        lambda: perturbed((4, 4, 1), 1),
        lambda: perturbed((2,), 2, base_kind="gamma-mixture", final="diagonal"),
        lambda: build_baseline((2,), n_blocks=3, seed=3),
    ])
    def test_loaded_model_evaluates_identically(self, tmp_path, maker):
        flow = maker()
        path = tmp_path / "m.json"
        model_io.save(flow, path)
        back = model_io.load(path)
        rng = np.random.default_rng(9)
        z = rng.normal(size=(100, flow.dim))
        np.testing.assert_allclose(back.forward(z), flow.forward(z), atol=1e-12)
        x = flow.sample(100, rng)
        np.testing.assert_allclose(back.log_prob(x), flow.log_prob(x),
                                   atol=1e-12)

    def test_classifier_round_trip(self, tmp_path):
        clf = ReluClassifier([2, 8, 3], seed=5)
        path = tmp_path / "c.json"
        model_io.save(clf, path)
        back = model_io.load(path)
        x = np.random.default_rng(1).normal(size=(50, 2))
        np.testing.assert_allclose(back.logits(x), clf.logits(x), atol=1e-15)

    def test_classifier_file_feeds_verifier(self, tmp_path):
        from udlflow.verify import verify_local
        clf = ReluClassifier([2, 6, 2], seed=6)
        path = tmp_path / "c.json"
        model_io.save(clf, path)
        verdict = verify_local(model_io.load(path), np.zeros(2), 0.01,
                               budget=2000)
        assert verdict.status in ("certified", "falsified")

    def test_composite_round_trip(self, tmp_path):
        flow = perturbed((2,), 7)
        clf = ReluClassifier([2, 4, 2], seed=8)
        doc = model_io.encode_composite(flow, clf, duplicate_classifier=True)
        path = tmp_path / "comp.json"
        model_io.save(doc, path)
        back = model_io.load(path)
        assert back["duplicated"]
        z = np.random.default_rng(2).normal(size=(10, 2))
        np.testing.assert_allclose(back["flow"].forward(z), flow.forward(z),
                                   atol=1e-12)
        np.testing.assert_allclose(back["classifier"].logits(z),
                                   clf.logits(z), atol=1e-15)


class TestSchemaGuards:
    def _doc(self, tmp_path):
        flow = perturbed((2,), 10)
        path = tmp_path / "m.json"
        model_io.save(flow, path)
        return path, json.loads(path.read_text())

    def test_version_mismatch(self, tmp_path):
        path, doc = self._doc(tmp_path)
        doc["format_version"] = 99
        path.write_text(json.dumps(doc))
        with pytest.raises(VersionError):
            model_io.load(path)

    def test_truncated_parameters_name_the_layer(self, tmp_path):
        path, doc = self._doc(tmp_path)
        weights = doc["blocks"][1]["coupling"]["conditioner"]["weights"]
        weights[1] = weights[1][:-1]  # drop a row
        path.write_text(json.dumps(doc))
        with pytest.raises(SchemaError, match="block 1"):
            model_io.load(path)

    def test_zero_diagonal_sign_refused(self, tmp_path):
        path, doc = self._doc(tmp_path)
        doc["blocks"][0]["affine"]["diag_sign"][0] = 0.0
        path.write_text(json.dumps(doc))
        with pytest.raises(SchemaError, match="diagonal"):
            model_io.load(path)

    def test_unknown_kind(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text(json.dumps({"format_version": 1, "kind": "sculpture"}))
        with pytest.raises(SchemaError):
            model_io.load(path)

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text("{nope")
        with pytest.raises(SchemaError):
            model_io.load(path)


class TestGoldenFixture:
    def test_stored_flow_reproduces_recorded_log_probs(self):
        flow = model_io.load(os.path.join(FIXTURES, "toy_flow.json"))
        pts = load_csv(os.path.join(FIXTURES, "toy_points.csv")).samples
        expected = load_csv(os.path.join(FIXTURES, "toy_logprobs.csv")).samples
        np.testing.assert_allclose(flow.log_prob(pts), expected[:, 0],
                                   atol=1e-10)
