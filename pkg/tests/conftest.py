# /tests/conftest.py

import os

import pytest
import torch

from src.config import PROFILE_ENV, SEED_ENV, load_run_config
from src.models.gpnerf import build_model
from src.utils.dataset_io import build_dataset, build_scene_dataset, save_dataset

SLOW_ENV = "GPNERF_SLOW_TESTS"

slow = pytest.mark.skipif(os.environ.get(SLOW_ENV) != "1", reason=f"execução longa (defina {SLOW_ENV}=1)")


@pytest.fixture(autouse=True)
def ambiente_limpo(monkeypatch):
    # Nenhum teste deve herdar semente ou perfil do ambiente de quem roda
    monkeypatch.delenv(SEED_ENV, raising=False)
    monkeypatch.delenv(PROFILE_ENV, raising=False)


@pytest.fixture
def config_teste():
    return load_run_config(perfil="testing")


@pytest.fixture
def cena_pequena(config_teste):
    return build_scene_dataset(
        config_teste.scene_config(0), config_teste.n_views, config_teste.n_test_views, jitter=config_teste.camera_jitter
    )


@pytest.fixture
def dataset_pequeno(config_teste):
    return build_dataset(config_teste)


@pytest.fixture
def dataset_em_disco(tmp_path, dataset_pequeno):
    return save_dataset(dataset_pequeno, tmp_path / "dataset")


@pytest.fixture
def modelo_micro(config_teste):
    torch.manual_seed(0)
    return build_model(config_teste).double()
