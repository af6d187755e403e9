# /src/utils/checkpoint.py

"""
Checkpoints portáveis.

Arquivo zip único com:
    manifest.json          formato, passo, snapshot da configuração, lista de tensores
                           (nome, caminho do módulo, formato, dtype, arquivo) e grupos do otimizador
    tensors/NNNNN.bin      buffers float32 little-endian crus, em ordem C

Nenhum pickle é usado; qualquer linguagem que leia zip + JSON consegue ler os pesos.
"""

import json
import logging
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
import torch

from src.utils.exceptions import CheckpointError
from src.utils.validators import validate_required_fields

logger = logging.getLogger(__name__)

FORMATO = "gpnerf-checkpoint"
VERSAO = 1
DTYPE_BUFFER = "<f4"
CAMPOS_MANIFESTO = ("format", "version", "step", "config", "tensors")


@dataclass
class Checkpoint:
    """
    Conteúdo de um checkpoint carregado.

    Attributes:
        model_state (dict): nome do parâmetro -> tensor float32.
        optimizer_state (dict | None): no formato de `Optimizer.state_dict()`.
        step (int): passos já concluídos.
        config (dict): snapshot do RunConfig.
        meta (dict): informações extras (n_classes, modo instância, cena).
    """

    model_state: Dict[str, torch.Tensor]
    optimizer_state: Optional[Dict[str, Any]]
    step: int
    config: Dict[str, Any]
    meta: Dict[str, Any] = field(default_factory=dict)


def _buffer(tensor: torch.Tensor) -> bytes:
    return tensor.detach().cpu().to(torch.float32).contiguous().numpy().astype(DTYPE_BUFFER, copy=False).tobytes()


def _modulo(nome: str) -> str:
    return nome.rsplit(".", 1)[0] if "." in nome else ""


def save_checkpoint(caminho, model: torch.nn.Module, optimizer=None, step: int = 0, config=None, meta=None) -> Path:
    """Grava modelo (+ estado do Adam) no formato zip + float32 LE."""
    caminho = Path(caminho)
    caminho.parent.mkdir(parents=True, exist_ok=True)
    entradas = []
    buffers = []

    def registrar(nome: str, tensor: torch.Tensor) -> str:
        arquivo = f"tensors/{len(buffers):05d}.bin"
        entradas.append(
            {"name": nome, "module": _modulo(nome), "shape": list(tensor.shape), "dtype": "float32", "file": arquivo}
        )
        buffers.append((arquivo, _buffer(tensor)))
        return arquivo

    for nome, tensor in model.state_dict().items():
        registrar(f"model/{nome}", tensor)

    otimizador = None
    if optimizer is not None:
        estado = optimizer.state_dict()
        chaves: Dict[str, Dict[str, str]] = {}
        for indice, valores in estado["state"].items():
            chaves[str(indice)] = {}
            for chave, valor in valores.items():
                chaves[str(indice)][chave] = registrar(f"optimizer/{indice}/{chave}", torch.as_tensor(valor))
        grupos = []
        for grupo in estado["param_groups"]:
            grupos.append({k: (list(v) if isinstance(v, tuple) else v) for k, v in grupo.items()})
        otimizador = {"param_groups": grupos, "state": chaves}

    manifesto = {
        "format": FORMATO,
        "version": VERSAO,
        "step": int(step),
        "config": dict(config or {}),
        "meta": dict(meta or {}),
        "tensors": entradas,
        "optimizer": otimizador,
    }
    temporario = caminho.with_suffix(caminho.suffix + ".tmp")
    with zipfile.ZipFile(temporario, "w", compression=zipfile.ZIP_STORED) as arquivo_zip:
        arquivo_zip.writestr("manifest.json", json.dumps(manifesto, indent=2))
        for nome, dados in buffers:
            arquivo_zip.writestr(nome, dados)
    temporario.replace(caminho)
    logger.info(f"Checkpoint salvo em {caminho} (passo {step}, {len(entradas)} tensores)")
    return caminho


def _ler_tensor(arquivo_zip: zipfile.ZipFile, entrada: Dict[str, Any], caminho: Path) -> torch.Tensor:
    try:
        dados = arquivo_zip.read(entrada["file"])
    except KeyError:
        raise CheckpointError(f"Buffer ausente no checkpoint {caminho}: {entrada['file']} ({entrada['name']})")
    forma = tuple(entrada["shape"])
    esperado = int(np.prod(forma, dtype=np.int64)) * 4
    if len(dados) != esperado:
        raise CheckpointError(
            f"Buffer de {entrada['name']} com {len(dados)} bytes; esperado {esperado} para {forma}"
        )
    return torch.from_numpy(np.frombuffer(dados, dtype=DTYPE_BUFFER).astype(np.float32).reshape(forma))


def load_checkpoint(caminho) -> Checkpoint:
    """
    Raises:
        CheckpointError: arquivo ausente, formato desconhecido ou buffers inconsistentes.
    """
    caminho = Path(caminho)
    if not caminho.exists():
        raise CheckpointError(f"Checkpoint não encontrado: {caminho}")
    try:
        arquivo_zip = zipfile.ZipFile(caminho)
    except zipfile.BadZipFile as e:
        raise CheckpointError(f"Checkpoint corrompido {caminho}: {e}")

    with arquivo_zip:
        try:
            manifesto = json.loads(arquivo_zip.read("manifest.json"))
        except (KeyError, json.JSONDecodeError) as e:
            raise CheckpointError(f"Manifesto ausente ou inválido em {caminho}: {e}")
        faltando = validate_required_fields(manifesto, CAMPOS_MANIFESTO)
        if faltando or manifesto["format"] != FORMATO:
            raise CheckpointError(f"Manifesto incompatível em {caminho} (faltando: {faltando})")

        por_arquivo = {}
        estado_modelo = {}
        for entrada in manifesto["tensors"]:
            tensor = _ler_tensor(arquivo_zip, entrada, caminho)
            por_arquivo[entrada["file"]] = tensor
            if entrada["name"].startswith("model/"):
                estado_modelo[entrada["name"][len("model/"):]] = tensor

        estado_otimizador = None
        if manifesto.get("optimizer"):
            bruto = manifesto["optimizer"]
            estado = {
                int(indice): {chave: por_arquivo[arquivo].clone() for chave, arquivo in valores.items()}
                for indice, valores in bruto["state"].items()
            }
            estado_otimizador = {"state": estado, "param_groups": bruto["param_groups"]}

    return Checkpoint(
        model_state=estado_modelo,
        optimizer_state=estado_otimizador,
        step=int(manifesto["step"]),
        config=manifesto["config"],
        meta=manifesto.get("meta", {}),
    )


def restore_model(checkpoint: Checkpoint):
    """Reconstrói o GPNeRF a partir do snapshot e carrega os pesos."""
    from src.config import RunConfig
    from src.models.gpnerf import build_model

    config = RunConfig.from_dict(checkpoint.config)
    n_classes = int(checkpoint.meta.get("n_classes", config.n_classes))
    modelo = build_model(config, n_classes=n_classes)
    try:
        modelo.load_state_dict(checkpoint.model_state)
    except RuntimeError as e:
        raise CheckpointError(f"Pesos incompatíveis com a arquitetura do snapshot: {e}")
    return modelo, config
