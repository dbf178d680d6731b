import json

import numpy as np
import pytest

from tputboost.data import split_boundaries
from tputboost.exceptions import ModelIntegrityError
from tputboost.persistence import (
    FORMAT_VERSION,
    ThroughputModel,
    load_model,
    model_from_dict,
    model_to_dict,
    save_model,
)


@pytest.fixture(scope="module")
def fitted(small_synth, small_models):
    s = small_synth
    bounds = split_boundaries(s["ds"].timestamps)
    common = dict(
        transform=s["transform"],
        feature_names=s["train"].feature_names,
        feature_category=s["train"].feature_category,
        encoders=dict(s["train"].encoders),
        tech="NR_SA",
        split=bounds,
    )
    point, dist = small_models
    return {"point": ThroughputModel(point, **common), "dist": ThroughputModel(dist, **common)}


@pytest.mark.parametrize("kind", ["point", "dist"])
def test_round_trip_bit_identical(fitted, small_synth, tmp_path, kind):
    model = fitted[kind]
    path = tmp_path / "m.json"
    save_model(model, path)
    again = load_model(path)
    X = small_synth["ds"].features[:1000]
    np.testing.assert_array_equal(again.predict(X), model.predict(X))
    if kind == "dist":
        np.testing.assert_array_equal(again.pred_dist(X).log_sigma, model.pred_dist(X).log_sigma)
    assert again.transform == model.transform
    assert again.split == model.split
    assert again.feature_names == model.feature_names
    assert again.encoders["band"].mapping == model.encoders["band"].mapping
    # a second save is byte-identical
    save_model(again, tmp_path / "m2.json")
    assert (tmp_path / "m2.json").read_bytes() == path.read_bytes()


def test_header_fields(fitted):
    d = model_to_dict(fitted["dist"])
    assert d["format_version"] == FORMAT_VERSION == 1
    assert d["model_type"] == "dist"
    assert len(d["mu_trees"]) == len(d["logsigma_trees"]) == len(d["scalings"])
    assert d["config"]["learning_rate"] == d["learning_rate"]


def test_unknown_version_rejected(fitted):
    d = model_to_dict(fitted["point"])
    d["format_version"] = 2
    with pytest.raises(ModelIntegrityError) as err:
        model_from_dict(d)
    assert err.value.field == "format_version"


def test_truncated_file(fitted, tmp_path):
    path = tmp_path / "m.json"
    save_model(fitted["point"], path)
    path.write_text(path.read_text()[:500])
    with pytest.raises(ModelIntegrityError) as err:
        load_model(path)
    assert err.value.field == "<file>"


def _corrupt(d, kind):
    if kind == "missing":
        del d["target_transform"]["sigma_train"]
        return "target_transform.sigma_train"
    if kind == "child":
        d["trees"][3]["left"][0] = 10_000
        return "trees[3].left"
    if kind == "lr":
        d["learning_rate"] = 0.5
        return "learning_rate"
    if kind == "best":
        d["best_iteration"] = len(d["trees"]) + 1
        return "best_iteration"
    if kind == "names":
        d["feature_category"] = d["feature_category"][:-1]
        return "feature_category"
    raise AssertionError(kind)


@pytest.mark.parametrize("kind", ["missing", "child", "lr", "best", "names"])
def test_corrupt_field_is_named(fitted, kind):
    d = json.loads(json.dumps(model_to_dict(fitted["point"])))
    field = _corrupt(d, kind)
    with pytest.raises(ModelIntegrityError) as err:
        model_from_dict(d)
    assert err.value.field == field
    assert field in str(err.value)


def test_dist_scalings_length_checked(fitted):
    d = json.loads(json.dumps(model_to_dict(fitted["dist"])))
    d["scalings"] = d["scalings"][:-1]
    with pytest.raises(ModelIntegrityError) as err:
        model_from_dict(d)
    assert err.value.field == "logsigma_trees"
