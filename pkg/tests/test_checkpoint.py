# tests/test_checkpoint.py

import json
import zipfile

import pytest
import torch

from src.models.backbone import extract_features
from src.models.gpnerf import build_model
from src.utils.checkpoint import FORMATO, load_checkpoint, restore_model, save_checkpoint
from src.utils.exceptions import CheckpointError


@pytest.fixture
def modelo(config_teste):
    torch.manual_seed(0)
    return build_model(config_teste)


def test_ida_e_volta_exata(tmp_path, modelo, config_teste):
    caminho = save_checkpoint(tmp_path / "c.zip", modelo, step=7, config=config_teste.to_dict(), meta={"n_classes": 3})
    checkpoint = load_checkpoint(caminho)
    assert checkpoint.step == 7
    assert checkpoint.meta["n_classes"] == 3
    restaurado, config = restore_model(checkpoint)
    assert config == config_teste
    for nome, tensor in modelo.state_dict().items():
        assert torch.equal(restaurado.state_dict()[nome], tensor)

    imagem = torch.rand(1, 3, 16, 16)
    with torch.no_grad():
        assert torch.equal(
            extract_features(restaurado.extractor, imagem).sem, extract_features(modelo.extractor, imagem).sem
        )


def test_estado_do_otimizador(tmp_path, modelo, config_teste):
    otimizador = torch.optim.Adam(modelo.parameters(), lr=1e-3)
    modelo.extractor(torch.rand(1, 3, 16, 16)).sem.sum().backward()
    otimizador.step()
    caminho = save_checkpoint(tmp_path / "c.zip", modelo, otimizador, step=1, config=config_teste.to_dict())

    checkpoint = load_checkpoint(caminho)
    novo = torch.optim.Adam(restore_model(checkpoint)[0].parameters(), lr=1e-3)
    novo.load_state_dict(checkpoint.optimizer_state)
    original = otimizador.state_dict()["state"]
    for indice, estado in novo.state_dict()["state"].items():
        torch.testing.assert_close(estado["exp_avg"], original[indice]["exp_avg"])


def test_manifesto(tmp_path, modelo, config_teste):
    caminho = save_checkpoint(tmp_path / "c.zip", modelo, step=3, config=config_teste.to_dict())
    with zipfile.ZipFile(caminho) as arquivo_zip:
        manifesto = json.loads(arquivo_zip.read("manifest.json"))
        nomes = set(arquivo_zip.namelist())
    assert manifesto["format"] == FORMATO
    assert manifesto["step"] == 3
    entrada = manifesto["tensors"][0]
    assert set(entrada) == {"name", "module", "shape", "dtype", "file"}
    assert entrada["dtype"] == "float32"
    assert all(e["file"] in nomes for e in manifesto["tensors"])
    assert not (tmp_path / "c.zip.tmp").exists()


def test_arquivo_ausente(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "nada.zip")


def test_arquivo_corrompido(tmp_path):
    caminho = tmp_path / "c.zip"
    caminho.write_bytes(b"isto nao e um zip")
    with pytest.raises(CheckpointError):
        load_checkpoint(caminho)


def test_buffer_truncado(tmp_path, modelo, config_teste):
    caminho = save_checkpoint(tmp_path / "c.zip", modelo, config=config_teste.to_dict())
    with zipfile.ZipFile(caminho) as arquivo_zip:
        conteudo = {nome: arquivo_zip.read(nome) for nome in arquivo_zip.namelist()}
    primeiro = json.loads(conteudo["manifest.json"])["tensors"][0]["file"]
    conteudo[primeiro] = conteudo[primeiro][:-4]
    with zipfile.ZipFile(caminho, "w") as arquivo_zip:
        for nome, dados in conteudo.items():
            arquivo_zip.writestr(nome, dados)
    with pytest.raises(CheckpointError):
        load_checkpoint(caminho)


def test_arquitetura_incompativel(tmp_path, modelo, config_teste):
    caminho = save_checkpoint(
        tmp_path / "c.zip", modelo, config=config_teste.replace(d_sem=64).to_dict()
    )
    with pytest.raises(CheckpointError):
        restore_model(load_checkpoint(caminho))
