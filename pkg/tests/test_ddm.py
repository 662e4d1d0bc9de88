import numpy as np
import pytest

from conftest import make_sample
from uncertainty_wrapper.core.ddm import (
    DdmHyperParams,
    ExternalPredictionsDdm,
    accuracy,
    load_ddm,
    load_external_predictions,
    predict,
    predict_sample,
    save_ddm,
    train_ddm,
    write_predictions,
)
from uncertainty_wrapper.errors import ConfigError, EventLookupError, InputError, SchemaError, TrainingError


def test_lymphocyte_classifier_is_accurate(small_dataset, trained_ddms):
    ddm = trained_ddms["L"]

    assert ddm.training["n_markers"] == 5
    assert ddm.training["train_accuracy"] > 0.9
    assert accuracy(ddm, small_dataset.split_samples("calibration")) > 0.9


def test_training_is_deterministic(small_dataset):
    train = small_dataset.split_samples("train")
    params = DdmHyperParams(epochs=3, seed=4)
    first = train_ddm(train, "L", params)
    second = train_ddm(train, "L", params)

    assert np.array_equal(first.hidden_weights, second.hidden_weights)
    assert first.output_bias == second.output_bias


def test_saved_model_predicts_identically(tmp_path, small_dataset, trained_ddms):
    ddm = trained_ddms["NKP"]
    sample = small_dataset.split_samples("test")[0]
    loaded = load_ddm(save_ddm(tmp_path / "nkp.json", ddm))

    assert loaded.cell_type == "NKP"
    assert np.array_equal(loaded.logits(sample.markers), ddm.logits(sample.markers))
    assert predict(loaded, sample.event(3)) == bool(predict_sample(ddm, sample)[3])


def test_training_needs_both_classes():
    sample = make_sample(np.random.default_rng(0).normal(size=(20, 2)), labels={"L": [True] * 19 + [False]})

    with pytest.raises(TrainingError):
        train_ddm([sample], "L", DdmHyperParams(epochs=1))
    with pytest.raises(TrainingError):
        train_ddm([], "L")


def test_empty_sample_gives_empty_predictions(trained_ddms):
    empty = make_sample(np.zeros((0, 5)))

    assert predict_sample(trained_ddms["L"], empty).shape == (0,)


def test_wrong_marker_count_is_rejected(trained_ddms):
    with pytest.raises(InputError):
        trained_ddms["L"].logits(np.zeros((3, 4)))


def test_hyperparams_reject_unknown_and_invalid_settings():
    assert DdmHyperParams.from_dict({"epochs": 3}, seed=9) == DdmHyperParams(epochs=3, seed=9)
    with pytest.raises(ConfigError):
        DdmHyperParams.from_dict({"layers": 3})
    with pytest.raises(ConfigError):
        DdmHyperParams(learning_rate=0.0)


def test_external_predictions_round_trip(tmp_path):
    sample = make_sample(np.zeros((3, 2)))
    ddm = ExternalPredictionsDdm("L", {("S1", "E0"): True, ("S1", "E1"): False, ("S1", "E2"): True})
    path = write_predictions(tmp_path / "pred.csv", ddm)
    loaded = load_external_predictions(path, "L")

    assert path.read_text(encoding="utf-8").splitlines()[0] == "sample_id,event_id,pred"
    assert predict_sample(loaded, sample).tolist() == [True, False, True]
    with pytest.raises(EventLookupError):
        predict_sample(loaded, make_sample(np.zeros((4, 2))))


def test_external_predictions_reject_duplicates_and_bad_header(tmp_path):
    duplicate = tmp_path / "dup.csv"
    duplicate.write_text("sample_id,event_id,pred\nS1,E0,1\nS1,E0,0\n", encoding="utf-8")
    header = tmp_path / "header.csv"
    header.write_text("sample,event,pred\nS1,E0,1\n", encoding="utf-8")

    with pytest.raises(SchemaError):
        load_external_predictions(duplicate, "L")
    with pytest.raises(SchemaError):
        load_external_predictions(header, "L")


def test_unknown_model_kind_is_a_schema_error(tmp_path):
    path = tmp_path / "model.json"
    path.write_text('{"kind": "forest"}', encoding="utf-8")

    with pytest.raises(SchemaError):
        load_ddm(path)
