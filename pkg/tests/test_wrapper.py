import json

import numpy as np
import pytest

from conftest import make_sample
from uncertainty_wrapper.core.ddm import DdmHyperParams, predict_sample, save_ddm, train_ddm
from uncertainty_wrapper.core.synthgen import demo_generator_config, generate_dataset, generate_sample
from uncertainty_wrapper.errors import ConfigError, InputError, SchemaError
from uncertainty_wrapper.quality.bounds import clopper_pearson_upper
from uncertainty_wrapper.quality.decision_tree import TreeParams, calibrate_tree
from uncertainty_wrapper.quality.quality_factors import VariantConfig, assemble_factors
from uncertainty_wrapper.quality.wrapper import (
    build_wrapper,
    load_wrapper,
    load_wrapper_dir,
    save_wrapper,
    wrapper_apply,
    wrapper_estimate,
    wrapper_file_name,
)
from uncertainty_wrapper.utils import dump_json

TREE = TreeParams(max_depth=4, min_samples_leaf=40)


def _build(dataset, ddms, cell_type, variant, **kwargs):
    return build_wrapper(
        VariantConfig.from_name(variant),
        ddms[cell_type],
        dataset.split_samples("train"),
        dataset.split_samples("calibration"),
        dataset.panel,
        cell_type,
        confidence=0.95,
        min_leaf_calib=20,
        tree_params=TREE,
        **kwargs,
    )


@pytest.fixture(scope="module")
def lymphocyte_wrapper(small_dataset, trained_ddms):
    return _build(small_dataset, trained_ddms, "L", "basic+outcome")


def test_wrapper_estimates_every_event(small_dataset, lymphocyte_wrapper):
    sample = small_dataset.split_samples("test")[0]
    estimates = wrapper_estimate(lymphocyte_wrapper, sample)
    tree = lymphocyte_wrapper.impact_model.trees[0]
    table = {str(leaf.leaf_id): leaf.uncertainty for leaf in tree.leaves}

    assert lymphocyte_wrapper.name == "L-basic+outcome"
    assert lymphocyte_wrapper.factor_names == ("marker_0", "marker_1", "outcome")
    assert len(estimates) == len(sample)
    assert np.array_equal(estimates.predictions, predict_sample(lymphocyte_wrapper.ddm, sample))
    assert all(table[leaf] == u for leaf, u in zip(estimates.leaf_ids, estimates.uncertainties))
    assert ((estimates.uncertainties > 0) & (estimates.uncertainties <= 1)).all()
    assert estimates.scope_flags.dtype == bool


def test_calibrated_leaves_bound_their_error_rate(lymphocyte_wrapper):
    tree = lymphocyte_wrapper.impact_model.trees[0]

    assert tree.confidence == 0.95
    for leaf in tree.leaves:
        assert leaf.uncertainty >= leaf.calib_error_rate
        assert leaf.n_calib >= 20 or tree.n_leaves == 1


def test_build_is_deterministic(small_dataset, trained_ddms, lymphocyte_wrapper):
    again = _build(small_dataset, trained_ddms, "L", "basic+outcome")

    assert dump_json(again.to_dict()) == dump_json(lymphocyte_wrapper.to_dict())


def test_category_wrapper_prefixes_leaves(small_dataset, trained_ddms):
    wrapper = _build(small_dataset, trained_ddms, "L", "density-category")
    estimates = wrapper_estimate(wrapper, small_dataset.split_samples("test")[0])
    prefixes = np.array([leaf.split("/")[0] for leaf in estimates.leaf_ids])

    assert wrapper.impact_model.kind == "category_based"
    assert np.array_equal(prefixes == "pos", estimates.predictions)


def test_subtype_wrapper_on_parent_predictions(small_dataset, trained_ddms, lymphocyte_wrapper):
    wrapper = _build(
        small_dataset,
        trained_ddms,
        "NKP",
        "combined+outcome",
        parent_wrapper=lymphocyte_wrapper,
        subtype_basis="parent_prediction",
    )
    train = small_dataset.split_samples("train")
    expected = sum(int(predict_sample(lymphocyte_wrapper.ddm, s).sum()) for s in train)

    assert wrapper.metadata["subtype_basis"] == "parent_prediction"
    assert wrapper.metadata["train_events"] == expected
    assert wrapper.factor_names[-2:] == ("homogeneity", "outcome")


def test_build_rejects_inconsistent_setup(small_dataset, trained_ddms):
    with pytest.raises(ConfigError):
        _build(small_dataset, trained_ddms, "NKP", "basic", subtype_basis="parent_prediction")
    with pytest.raises(ConfigError):
        _build(small_dataset, trained_ddms, "NKP", "basic", subtype_basis="guess")
    with pytest.raises(InputError):
        build_wrapper(
            VariantConfig.from_name("basic"),
            trained_ddms["L"],
            small_dataset.split_samples("train"),
            small_dataset.split_samples("calibration"),
            small_dataset.panel,
            "NKP",
        )


def test_wrong_marker_count_is_rejected(lymphocyte_wrapper):
    with pytest.raises(InputError):
        wrapper_estimate(lymphocyte_wrapper, make_sample(np.ones((3, 4))))


def test_estimate_records_serialise(small_dataset, lymphocyte_wrapper):
    records = wrapper_apply(lymphocyte_wrapper, small_dataset.split_samples("test")[0])
    first = records[0].to_dict()

    assert first["certainty"] == pytest.approx(1.0 - first["uncertainty"])
    assert first["event_id"] == "E000000"
    json.dumps(first)


def test_saved_wrapper_reproduces_estimates(tmp_path, small_dataset, trained_ddms, lymphocyte_wrapper):
    ddm_path = save_ddm(tmp_path / "ddm" / "L.json", trained_ddms["L"])
    path = save_wrapper(tmp_path / "wrappers" / wrapper_file_name("L", "basic+outcome"), lymphocyte_wrapper, ddm_path)
    loaded = load_wrapper(path)
    sample = small_dataset.split_samples("test")[0]

    assert json.loads(path.read_text(encoding="utf-8"))["ddm_ref"] == "../ddm/L.json"
    original = wrapper_estimate(lymphocyte_wrapper, sample)
    restored = wrapper_estimate(loaded, sample)
    assert np.array_equal(original.uncertainties, restored.uncertainties)
    assert np.array_equal(original.leaf_ids, restored.leaf_ids)


def test_wrapper_dir_shares_classifiers(tmp_path, small_dataset, trained_ddms, lymphocyte_wrapper):
    ddm_path = save_ddm(tmp_path / "ddm" / "L.json", trained_ddms["L"])
    category = _build(small_dataset, trained_ddms, "L", "density-category")
    for wrapper in (lymphocyte_wrapper, category):
        save_wrapper(tmp_path / "wrappers" / f"{wrapper.name}.json", wrapper, ddm_path)
    wrappers = load_wrapper_dir(tmp_path / "wrappers")

    assert [w.name for w in wrappers] == ["L-basic+outcome", "L-density-category"]
    assert wrappers[0].ddm is wrappers[1].ddm


def test_wrapper_dir_errors(tmp_path, lymphocyte_wrapper):
    with pytest.raises(FileNotFoundError):
        load_wrapper_dir(tmp_path / "missing")
    (tmp_path / "empty").mkdir()
    with pytest.raises(FileNotFoundError):
        load_wrapper_dir(tmp_path / "empty")
    save_wrapper(tmp_path / "loose" / "L.json", lymphocyte_wrapper)
    with pytest.raises(SchemaError):
        load_wrapper_dir(tmp_path / "loose")


def test_depth_zero_wrapper_is_one_calibrated_leaf(small_dataset, trained_ddms):
    flat = build_wrapper(
        VariantConfig.from_name("basic+outcome"),
        trained_ddms["L"],
        small_dataset.split_samples("train"),
        small_dataset.split_samples("calibration"),
        small_dataset.panel,
        "L",
        confidence=0.95,
        min_leaf_calib=20,
        tree_params=TreeParams(max_depth=0, min_samples_leaf=1),
    )
    calib = small_dataset.split_samples("calibration")
    k_total = sum(int((predict_sample(trained_ddms["L"], s) != s.label("L")).sum()) for s in calib)
    n_total = sum(len(s) for s in calib)
    estimates = wrapper_estimate(flat, small_dataset.split_samples("test")[0])

    tree = flat.impact_model.trees[0]
    assert tree.n_leaves == 1
    assert (tree.root.n_calib, tree.root.k_calib) == (n_total, k_total)
    assert tree.root.uncertainty == clopper_pearson_upper(k_total, n_total, 0.95)
    assert np.all(estimates.uncertainties == tree.root.uncertainty)


def _leaf_counts(wrapper, tree, sample):
    predictions = predict_sample(wrapper.ddm, sample)
    errors = predictions != sample.label(wrapper.cell_type.name)
    factors = assemble_factors(wrapper.variant, sample, predictions, wrapper.cell_type).values
    return factors, errors, tree.route(factors)


@pytest.mark.slow
def test_leaf_bounds_rarely_fall_below_true_error_rates():
    config = demo_generator_config(events_per_sample=4000)
    dataset = generate_dataset(config, (3, 1, 1), seed=41)
    ddm = train_ddm(dataset.split_samples("train"), "L", DdmHyperParams(epochs=10, seed=0))
    wrapper = build_wrapper(
        VariantConfig.from_name("basic+outcome"),
        ddm,
        dataset.split_samples("train"),
        dataset.split_samples("calibration"),
        dataset.panel,
        "L",
        confidence=0.99,
        min_leaf_calib=1,
        tree_params=TreeParams(max_depth=3, min_samples_leaf=300),
    )
    tree = wrapper.impact_model.trees[0]
    n_leaves = tree.n_leaves

    pool_n = np.zeros(n_leaves)
    pool_k = np.zeros(n_leaves)
    for index in range(250):
        _, errors, leaves = _leaf_counts(wrapper, tree, generate_sample(config, seed=90, sample_index=index))
        pool_n += np.bincount(leaves, minlength=n_leaves)
        pool_k += np.bincount(leaves, weights=errors, minlength=n_leaves)
    assert pool_n.sum() == 1_000_000
    true_rate = pool_k / np.maximum(pool_n, 1)

    failures = np.zeros(n_leaves)
    for rebuild in range(200):
        factors, errors, _ = _leaf_counts(wrapper, tree, generate_sample(config, seed=500 + rebuild, sample_index=0))
        calibrated = calibrate_tree(tree, factors, errors, confidence=0.99)
        bounds = np.array([calibrated.leaf(leaf_id).uncertainty for leaf_id in range(n_leaves)])
        failures += bounds < true_rate

    assert failures.max() / 200 <= 0.03
