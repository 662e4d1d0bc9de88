import networkx as nx
import numpy as np
import pytest
from scipy.stats import norm

from conftest import make_sample
from uncertainty_wrapper.core.data_model import CellTypeSpec
from uncertainty_wrapper.core.transforms import MarkerTransform
from uncertainty_wrapper.errors import ConfigError, InputError
from uncertainty_wrapper.quality.quality_factors import (
    NOISE,
    VariantConfig,
    assemble_factors,
    eval_density,
    fit_density,
    fit_homogeneity,
    percentile_factors,
    percentile_ranks,
    scott_bandwidth,
)

ROOT = CellTypeSpec("L", None, ((0, 1),))
CHILD = CellTypeSpec("X", "L", ((0, 1),))
TRANSFORM = MarkerTransform()


@pytest.mark.parametrize(
    "name,variant,outcome,kind",
    [
        ("basic", "basic", False, "default"),
        ("density+outcome", "density", True, "default"),
        ("combined-category", "combined", False, "category_based"),
        ("baseline", "baseline", False, "default"),
    ],
)
def test_variant_names_parse(name, variant, outcome, kind):
    config = VariantConfig.from_name(name)

    assert (config.variant, config.include_outcome, config.impact_model_kind) == (variant, outcome, kind)
    assert config.name == name
    assert VariantConfig.from_dict(config.to_dict()) == config


@pytest.mark.parametrize("name", ["baseline+outcome", "basic+outcome-category", "forest", "baseline-category"])
def test_invalid_variant_names(name):
    with pytest.raises(ConfigError):
        VariantConfig.from_name(name)


def test_factor_order_per_variant(panel):
    nkp = panel.cell_type("NKP")
    lymphocytes = panel.cell_type("L")

    assert VariantConfig.from_name("combined+outcome").factor_names(nkp) == (
        "marker_2",
        "marker_4",
        "density_2_4",
        "homogeneity",
        "outcome",
    )
    assert VariantConfig.from_name("percentile").factor_names(lymphocytes) == (
        "marker_0",
        "marker_1",
        "percentile_0",
        "percentile_1",
    )
    assert VariantConfig.from_name("combined").factor_names(lymphocytes) == ("marker_0", "marker_1", "density_0_1")
    on_root = VariantConfig(variant="homogeneity", homogeneity_on_root=True)
    assert on_root.factor_names(lymphocytes)[-1] == "homogeneity"


def test_percentile_ranks_use_mid_ranks():
    assert percentile_ranks(np.array([3.0, 1.0, 2.0, 2.0])).tolist() == [0.875, 0.125, 0.5, 0.5]
    assert percentile_ranks(np.array([])).size == 0


def test_percentile_factors_need_events():
    sample = make_sample(np.array([[1.0, 5.0], [2.0, 4.0]]))

    assert percentile_factors(sample, 0, ROOT).tolist() == [0.25, 0.75]
    with pytest.raises(InputError):
        percentile_factors(make_sample(np.zeros((0, 2))), 0, ROOT)


def test_density_matches_product_gaussian_sum():
    support_t = np.array([[0.5, 1.0], [1.0, 1.5], [1.2, 0.8], [2.0, 2.0]])
    sample = make_sample(TRANSFORM.inverse(support_t))
    model = fit_density(sample, (0, 1), bandwidth_rule=0.4)
    point = np.array([[1.1, 1.2]])

    expected = np.mean(norm.pdf(point[0, 0], support_t[:, 0], 0.4) * norm.pdf(point[0, 1], support_t[:, 1], 0.4))
    assert model.evaluate_transformed(point)[0] == pytest.approx(expected, rel=1e-7)
    raw_point = TRANSFORM.inverse(point)[0]
    assert eval_density(model, raw_point) == pytest.approx(expected, rel=1e-7)


def test_density_integrates_to_one():
    rng = np.random.default_rng(0)
    sample = make_sample(TRANSFORM.inverse(rng.normal([2.0, 1.0], [0.3, 0.2], size=(300, 2))))
    model = fit_density(sample, (0, 1))
    xs = np.linspace(0.0, 4.0, 161)
    ys = np.linspace(-0.5, 2.5, 121)
    grid = np.array([[x, y] for x in xs for y in ys])
    mass = model.evaluate_transformed(grid).sum() * (xs[1] - xs[0]) * (ys[1] - ys[0])

    assert mass == pytest.approx(1.0, abs=0.02)


@pytest.mark.slow
def test_density_mass_is_one_across_samples():
    rng = np.random.default_rng(20)
    for _ in range(20):
        n = int(rng.integers(50, 301))
        centres = rng.uniform(0.5, 3.0, size=(int(rng.integers(1, 3)), 2))
        support = centres[rng.integers(0, len(centres), size=n)] + rng.normal(0.0, rng.uniform(0.15, 0.4, 2), (n, 2))
        model = fit_density(make_sample(TRANSFORM.inverse(support)), (0, 1))
        hx, hy = model.bandwidths
        xs = np.arange(support[:, 0].min() - 7 * hx, support[:, 0].max() + 7 * hx, hx / 2)
        ys = np.arange(support[:, 1].min() - 7 * hy, support[:, 1].max() + 7 * hy, hy / 2)
        grid = np.array(np.meshgrid(xs, ys, indexing="ij")).reshape(2, -1).T
        mass = model.evaluate_transformed(grid).sum() * (hx / 2) * (hy / 2)

        assert mass == pytest.approx(1.0, abs=0.01)



def test_scott_bandwidth():
    values = np.arange(5, dtype=float)

    assert scott_bandwidth(values) == pytest.approx(np.std(values, ddof=1) * 5 ** (-1 / 6))
    assert scott_bandwidth(np.full(10, 3.0)) == 1e-6
    assert scott_bandwidth(np.array([1.0])) == 1e-6


def _blob_sample():
    rng = np.random.default_rng(1)
    blob_a = rng.normal([1.0, 1.0], 0.02, size=(50, 2))
    blob_b = rng.normal([3.0, 3.0], 0.02, size=(50, 2))
    outlier = np.array([[5.0, 0.0]])
    return make_sample(TRANSFORM.inverse(np.vstack([blob_a, blob_b, outlier])))


def test_homogeneity_scores_cluster_agreement():
    sample = _blob_sample()
    predictions = np.array([True] * 45 + [False] * 5 + [False] * 50 + [True])
    model = fit_homogeneity(sample, predictions, CHILD, eps=0.3, min_pts=5)

    assert model.n_clusters == 2
    assert model.labels[-1] == NOISE
    assert model.agreement[:45] == pytest.approx(np.full(45, 0.9))
    assert model.agreement[45:50] == pytest.approx(np.full(5, 0.1))
    assert model.agreement[50:].tolist() == [1.0] * 51


def _dbscan_reference(points, eps, min_pts):
    """Core points, their eps-graph components, and the eps-neighbourhood matrix."""
    distances = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=2)
    neighbours = distances <= eps
    core = neighbours.sum(axis=1) >= min_pts
    graph = nx.Graph()
    graph.add_nodes_from(np.flatnonzero(core).tolist())
    rows, cols = np.nonzero(np.triu(neighbours & core[:, None] & core[None, :], k=1))
    graph.add_edges_from(zip(rows.tolist(), cols.tolist()))
    return neighbours, core, list(nx.connected_components(graph))


def _clustered_points(rng):
    n = int(rng.integers(10, 301))
    centres = rng.uniform(0.0, 3.0, size=(int(rng.integers(1, 5)), 2))
    spread = rng.uniform(0.05, 0.3)
    points = centres[rng.integers(0, len(centres), size=n)] + rng.normal(0.0, spread, size=(n, 2))
    background = rng.random(n) < 0.15
    points[background] = rng.uniform(-0.5, 3.5, size=(int(background.sum()), 2))
    return points


def test_homogeneity_clusters_match_reference_dbscan():
    rng = np.random.default_rng(8)
    for _ in range(100):
        points = _clustered_points(rng)
        eps = float(rng.uniform(0.1, 0.5))
        min_pts = int(rng.integers(2, 12))
        model = fit_homogeneity(
            make_sample(TRANSFORM.inverse(points)), np.zeros(len(points), dtype=bool), CHILD, eps=eps, min_pts=min_pts
        )
        labels = model.labels
        neighbours, core, components = _dbscan_reference(points, eps, min_pts)

        cluster_ids = [{int(labels[i]) for i in component} for component in components]
        assert all(len(ids) == 1 for ids in cluster_ids)
        assert NOISE not in {next(iter(ids)) for ids in cluster_ids}
        assert len({next(iter(ids)) for ids in cluster_ids}) == len(components) == model.n_clusters
        for i in np.flatnonzero(~core):
            reachable = {int(labels[j]) for j in np.flatnonzero(neighbours[i] & core)}
            if reachable:
                assert int(labels[i]) in reachable
            else:
                assert labels[i] == NOISE



def test_homogeneity_rejects_prediction_mismatch():
    with pytest.raises(InputError):
        fit_homogeneity(make_sample(np.zeros((3, 2))), np.zeros(2, dtype=bool), CHILD)


def test_assemble_combined_factors(panel, small_dataset):
    sample = small_dataset.samples[0]
    lymphocytes = sample.subset(sample.label("L"))
    nkp = panel.cell_type("NKP")
    predictions = lymphocytes.label("NKP")
    factors = assemble_factors(VariantConfig.from_name("combined+outcome"), lymphocytes, predictions, nkp)

    assert factors.names == ("marker_2", "marker_4", "density_2_4", "homogeneity", "outcome")
    assert factors.values.shape == (len(lymphocytes), 5)
    assert np.array_equal(factors.column("marker_4"), lymphocytes.markers[:, 4])
    assert np.array_equal(factors.column("outcome"), predictions.astype(float))
    assert (factors.column("density_2_4") > 0).all()
    assert factors.vector(0)["outcome"] == float(predictions[0])


def test_assemble_rejects_bad_input(panel):
    sample = make_sample(np.ones((4, 3)))
    variant = VariantConfig.from_name("basic")

    with pytest.raises(InputError):
        assemble_factors(variant, sample, np.zeros(3, dtype=bool), ROOT)
    with pytest.raises(InputError):
        assemble_factors(variant, sample, np.zeros(4, dtype=bool), panel.cell_type("NKP"))
    empty = assemble_factors(VariantConfig.from_name("density+outcome"), make_sample(np.zeros((0, 3))), [], ROOT)
    assert empty.values.shape == (0, 4)
