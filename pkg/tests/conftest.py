import numpy as np
import pytest

from hypersep.data import build_dataset


@pytest.fixture(scope="session")
def smoke_dataset(tmp_path_factory):
    """Tiny dataset shared by pipeline tests: 12 tracks x 1.5 s."""
    root = tmp_path_factory.mktemp("smoke_data")
    manifest = build_dataset(root, n_tracks=12, duration=1.5, master_seed=11)
    return root, manifest


@pytest.fixture(scope="session")
def smoke_model(smoke_dataset):
    """A briefly-trained hyperbolic model over the smoke dataset."""
    from hypersep.training import RunConfig, train

    root, manifest = smoke_dataset
    cfg = RunConfig(dataset=str(root), loss="ce_ibm_w", epochs=2, batch_size=4, chunk_seconds=1.0, seed=7)
    model, log = train(cfg, manifest)
    return model, log
