from __future__ import annotations

import numpy as np
import pytest

from styleshield import (
    create_backbone,
    ingest,
    load_image,
    make_fixture_dataset,
    stub_provider,
)


@pytest.fixture(scope="session")
def toy_small():
    return create_backbone("toy-small")


@pytest.fixture(scope="session")
def toy_sd15():
    return create_backbone("toy-sd15")


@pytest.fixture(scope="session")
def toy_identity():
    return create_backbone("toy-identity")


@pytest.fixture(scope="session")
def fixture_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("dataset")
    return make_fixture_dataset(root, images_per_artist=3, size=64, seed=9222)


@pytest.fixture(scope="session")
def manifest(fixture_root):
    return ingest(fixture_root)


@pytest.fixture(scope="session")
def clean_images(manifest):
    entry = manifest.entries[0]
    return [load_image(p) for p in entry.image_paths]


@pytest.fixture(scope="session")
def provider():
    return stub_provider(9222)


@pytest.fixture()
def rng():
    return np.random.default_rng(9222)
