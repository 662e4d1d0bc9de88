import json
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pytest

from uncertainty_wrapper.cli import main
from uncertainty_wrapper.core.data_model import Sample
from uncertainty_wrapper.core.ddm import DdmHyperParams, train_ddm
from uncertainty_wrapper.core.synthgen import demo_generator_config, demo_panel, generate_dataset

SMALL_VARIANTS = {
    "L": ["baseline", "basic+outcome", "density-category"],
    "BP": ["basic+outcome"],
    "TP": ["basic+outcome"],
    "NKP": ["basic+outcome", "combined+outcome"],
}


def make_sample(
    markers,
    labels: Optional[Dict[str, List[bool]]] = None,
    sample_id: str = "S1",
) -> Sample:
    markers = np.asarray(markers, dtype=np.float64)
    return Sample(
        sample_id=sample_id,
        event_ids=np.array([f"E{i}" for i in range(markers.shape[0])], dtype=object),
        markers=markers,
        labels=labels or {},
    )


@pytest.fixture
def panel():
    return demo_panel()


@pytest.fixture(scope="session")
def small_dataset():
    config = demo_generator_config(events_per_sample=800)
    return generate_dataset(config, (2, 2, 1), seed=7)


@pytest.fixture(scope="session")
def trained_ddms(small_dataset):
    train = small_dataset.split_samples("train")
    params = DdmHyperParams(epochs=10, seed=0)
    lymphocytes = [s.subset(s.label("L")) for s in train]
    return {
        "L": train_ddm(train, "L", params),
        "NKP": train_ddm(lymphocytes, "NKP", params),
    }


@pytest.fixture(scope="session")
def pipeline(tmp_path_factory):
    """A complete small CLI run: generate, train, build, evaluate, aggregate."""
    root = tmp_path_factory.mktemp("pipeline")
    config_path = root / "config.json"
    assert main(["init-config", str(config_path), "-q"]) == 0

    data = json.loads(config_path.read_text(encoding="utf-8"))
    data["generator"]["events_per_sample"] = 500
    data["split_counts"] = [2, 2, 2]
    data["ddm"]["epochs"] = 5
    data["tree"] = {"max_depth": 4, "min_samples_leaf": 40}
    data["min_leaf_calib"] = {"default": 20}
    data["variants"] = SMALL_VARIANTS
    data["aggregate_variants"] = {}
    config_path.write_text(json.dumps(data, indent=2), encoding="utf-8")

    for command in ("generate", "train", "build", "evaluate", "aggregate"):
        assert main([command, "--config", str(config_path), "-q"]) == 0, command
    return {
        "config": config_path,
        "data": root / "data",
        "models": root / "models",
        "outputs": root / "outputs",
    }


def read_text(path: Path) -> str:
    return Path(path).read_text(encoding="utf-8")
