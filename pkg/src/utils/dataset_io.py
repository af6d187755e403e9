# /src/utils/dataset_io.py

"""
Geração e persistência de datasets sintéticos.

Layout em disco:

    <raiz>/dataset.json                 lista de cenas + snapshot da configuração
    <raiz>/scene_000/scene.json         caixas, paleta, sala, divisão treino/teste, faixa de profundidade
    <raiz>/scene_000/views/0000_rgb.png    RGB 8 bits
    <raiz>/scene_000/views/0000_depth.png  16 bits, [t_near, t_far] -> [0, 65535] linear
    <raiz>/scene_000/views/0000_sem.png    índice 8 bits
    <raiz>/scene_000/views/0000_inst.png   índice 8 bits
    <raiz>/scene_000/views/0000_pose.json  cam_to_world 4x4 (linhas) + fx, fy, cx, cy

A volta salvar/carregar é exata para poses e rótulos, 8 bits para RGB e
quantizada em 16 bits para a profundidade (erro <= (t_far - t_near) / 65535).
"""

import json
import logging
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from PIL import Image

from src.models.camera import CameraModel
from src.models.scene import Scene, ViewRecord
from src.utils.exceptions import DatasetError
from src.utils.scene_oracle import generate_scene, render_view_oracle, sample_camera_ring, split_views

logger = logging.getLogger(__name__)

MAX_PROFUNDIDADE_16 = 65535
ARQUIVO_DATASET = "dataset.json"
ARQUIVO_CENA = "scene.json"


@dataclass
class SceneDataset:
    """Vistas de uma cena com sua divisão treino/teste."""

    scene: Scene
    views: List[ViewRecord]
    train_views: List[int]
    test_views: List[int]
    name: str = "scene_000"

    @property
    def t_near(self) -> float:
        return self.scene.config.t_near

    @property
    def t_far(self) -> float:
        return self.scene.config.t_far

    @property
    def image_size(self):
        return self.scene.config.image_size

    @property
    def n_instances(self) -> int:
        return self.scene.n_instances

    def view(self, indice: int) -> ViewRecord:
        return self.views[indice]


@dataclass
class Dataset:
    """Conjunto de cenas (uma ou mais) mais o snapshot da configuração."""

    scenes: List[SceneDataset]
    config: Dict[str, Any] = field(default_factory=dict)
    root: Optional[Path] = None

    def __len__(self) -> int:
        return len(self.scenes)

    @property
    def n_views(self) -> int:
        return sum(len(cena.views) for cena in self.scenes)

    def summary(self) -> Dict[str, Any]:
        classes = set()
        for cena in self.scenes:
            for vista in cena.views:
                classes.update(int(c) for c in np.unique(vista.semantic))
        return {
            "scenes": len(self.scenes),
            "views": self.n_views,
            "views_per_scene": [len(c.views) for c in self.scenes],
            "classes": sorted(classes),
        }


# ========== GERAÇÃO ==========

def scene_seed(seed: int, indice: int) -> int:
    return int(seed) + 101 * int(indice)


def build_scene_dataset(scene_config, n_views: int, n_test: int, jitter: float = 0.05, name: str = "scene_000") -> SceneDataset:
    """Roda o oráculo de ponta a ponta para uma cena."""
    cena = generate_scene(scene_config)
    cameras = sample_camera_ring(cena, n_views, seed=scene_config.seed + 1, jitter=jitter)
    vistas = []
    for indice, camera in enumerate(cameras):
        vista = render_view_oracle(cena, camera)
        vista.index = indice
        vistas.append(vista)
    treino, teste = split_views(n_views, n_test, scene_config.seed)
    return SceneDataset(scene=cena, views=vistas, train_views=treino, test_views=teste, name=name)


def build_dataset(config) -> Dataset:
    """Gera `config.n_scenes` cenas a partir de um RunConfig."""
    cenas = []
    for k in range(config.n_scenes):
        cenas.append(
            build_scene_dataset(
                config.scene_config(scene_seed(config.seed, k)),
                config.n_views,
                config.n_test_views,
                jitter=config.camera_jitter,
                name=f"scene_{k:03d}",
            )
        )
        logger.info(f"Cena {k + 1}/{config.n_scenes} gerada ({config.n_views} vistas)")
    return Dataset(scenes=cenas, config=config.to_dict())


# ========== ESCRITA ==========

def quantize_depth(profundidade: np.ndarray, t_near: float, t_far: float) -> np.ndarray:
    normalizada = (np.clip(profundidade, t_near, t_far) - t_near) / (t_far - t_near)
    return np.round(normalizada * MAX_PROFUNDIDADE_16).astype(np.uint16)


def dequantize_depth(codigos: np.ndarray, t_near: float, t_far: float) -> np.ndarray:
    return t_near + codigos.astype(np.float64) / MAX_PROFUNDIDADE_16 * (t_far - t_near)


def _salvar_vista(pasta: Path, vista: ViewRecord, indice: int, t_near: float, t_far: float):
    prefixo = pasta / f"{indice:04d}"
    rgb = np.round(np.clip(vista.rgb, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(rgb).save(f"{prefixo}_rgb.png")
    Image.fromarray(quantize_depth(vista.depth, t_near, t_far)).save(f"{prefixo}_depth.png")
    Image.fromarray(vista.semantic.astype(np.uint8)).save(f"{prefixo}_sem.png")
    Image.fromarray(vista.instance.astype(np.uint8)).save(f"{prefixo}_inst.png")
    camera = vista.camera
    pose = {
        "cam_to_world": camera.cam_to_world.tolist(),
        "fx": camera.fx,
        "fy": camera.fy,
        "cx": camera.cx,
        "cy": camera.cy,
        "width": camera.width,
        "height": camera.height,
    }
    with open(f"{prefixo}_pose.json", "w", encoding="utf-8") as f:
        json.dump(pose, f, indent=2)


def save_scene(cena: SceneDataset, pasta: Path):
    pasta_vistas = pasta / "views"
    pasta_vistas.mkdir(parents=True, exist_ok=True)
    meta = cena.scene.to_dict()
    meta.update(
        {
            "name": cena.name,
            "n_views": len(cena.views),
            "train_views": list(cena.train_views),
            "test_views": list(cena.test_views),
            "depth_encoding": {"bits": 16, "t_near": cena.t_near, "t_far": cena.t_far},
        }
    )
    with open(pasta / ARQUIVO_CENA, "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2)
    for indice, vista in enumerate(cena.views):
        _salvar_vista(pasta_vistas, vista, indice, cena.t_near, cena.t_far)


def save_dataset(dataset: Dataset, caminho, force: bool = False) -> Path:
    """
    Grava o dataset no layout documentado.

    Raises:
        DatasetError: o diretório já existe e `force` é falso.
    """
    raiz = Path(caminho)
    if raiz.exists() and any(raiz.iterdir()):
        if not force:
            raise DatasetError("Diretório de destino já existe (use --force)", caminho=raiz)
        shutil.rmtree(raiz)
    raiz.mkdir(parents=True, exist_ok=True)
    for cena in dataset.scenes:
        save_scene(cena, raiz / cena.name)
    with open(raiz / ARQUIVO_DATASET, "w", encoding="utf-8") as f:
        json.dump({"scenes": [c.name for c in dataset.scenes], "config": dataset.config}, f, indent=2)
    dataset.root = raiz
    logger.info(f"Dataset salvo em {raiz} ({len(dataset.scenes)} cenas, {dataset.n_views} vistas)")
    return raiz


# ========== LEITURA ==========

def _ler_json(caminho: Path) -> Dict[str, Any]:
    if not caminho.exists():
        raise DatasetError("Arquivo ausente", caminho=caminho)
    try:
        with open(caminho, encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise DatasetError(f"JSON inválido: {e}", caminho=caminho)


def _ler_png(caminho: Path, campo: str) -> np.ndarray:
    if not caminho.exists():
        raise DatasetError("Imagem ausente", caminho=caminho, campo=campo)
    try:
        with Image.open(caminho) as imagem:
            return np.array(imagem)
    except OSError as e:
        raise DatasetError(f"Imagem corrompida: {e}", caminho=caminho, campo=campo)


def _campo(dados: Dict[str, Any], chave: str, caminho: Path):
    if chave not in dados:
        raise DatasetError("Campo obrigatório ausente", caminho=caminho, campo=chave)
    return dados[chave]


def _carregar_vista(pasta: Path, indice: int, t_near: float, t_far: float) -> ViewRecord:
    prefixo = f"{indice:04d}"
    caminho_pose = pasta / f"{prefixo}_pose.json"
    pose = _ler_json(caminho_pose)
    try:
        camera = CameraModel(
            fx=float(_campo(pose, "fx", caminho_pose)),
            fy=float(_campo(pose, "fy", caminho_pose)),
            cx=float(_campo(pose, "cx", caminho_pose)),
            cy=float(_campo(pose, "cy", caminho_pose)),
            cam_to_world=np.array(_campo(pose, "cam_to_world", caminho_pose), dtype=np.float64),
            width=int(pose.get("width", 0)),
            height=int(pose.get("height", 0)),
        )
    except (TypeError, ValueError) as e:
        raise DatasetError(f"Pose inválida: {e}", caminho=caminho_pose, campo="cam_to_world")

    rgb = _ler_png(pasta / f"{prefixo}_rgb.png", "rgb")
    profundidade = _ler_png(pasta / f"{prefixo}_depth.png", "depth")
    semantica = _ler_png(pasta / f"{prefixo}_sem.png", "semantic")
    instancia = _ler_png(pasta / f"{prefixo}_inst.png", "instance")
    if rgb.ndim != 3 or rgb.shape[-1] != 3:
        raise DatasetError(f"RGB com formato {rgb.shape}", caminho=pasta / f"{prefixo}_rgb.png", campo="rgb")
    return ViewRecord(
        rgb=rgb.astype(np.float64) / 255.0,
        depth=dequantize_depth(profundidade, t_near, t_far),
        semantic=semantica.astype(np.int64),
        instance=instancia.astype(np.int64),
        camera=camera,
        index=indice,
    )


def load_scene(pasta) -> SceneDataset:
    pasta = Path(pasta)
    caminho_meta = pasta / ARQUIVO_CENA
    meta = _ler_json(caminho_meta)
    try:
        cena = Scene.from_dict(meta)
    except (KeyError, TypeError, ValueError) as e:
        raise DatasetError(f"Metadados de cena inválidos: {e}", caminho=caminho_meta)
    codificacao = meta.get("depth_encoding", {})
    t_near = float(codificacao.get("t_near", cena.config.t_near))
    t_far = float(codificacao.get("t_far", cena.config.t_far))
    n_vistas = int(_campo(meta, "n_views", caminho_meta))
    vistas = [_carregar_vista(pasta / "views", i, t_near, t_far) for i in range(n_vistas)]
    return SceneDataset(
        scene=cena,
        views=vistas,
        train_views=[int(i) for i in meta.get("train_views", range(n_vistas))],
        test_views=[int(i) for i in meta.get("test_views", [])],
        name=meta.get("name", pasta.name),
    )


def load_dataset(caminho) -> Dataset:
    """
    Carrega uma raiz de dataset (com dataset.json) ou um diretório de cena isolado.

    Raises:
        DatasetError: arquivo ausente ou corrompido (com caminho e campo).
    """
    raiz = Path(caminho)
    if not raiz.is_dir():
        raise DatasetError("Diretório do dataset não encontrado", caminho=raiz)
    if (raiz / ARQUIVO_CENA).exists():
        return Dataset(scenes=[load_scene(raiz)], root=raiz)
    indice = _ler_json(raiz / ARQUIVO_DATASET)
    nomes: Sequence[str] = _campo(indice, "scenes", raiz / ARQUIVO_DATASET)
    cenas = [load_scene(raiz / nome) for nome in nomes]
    logger.info(f"Dataset carregado de {raiz}: {len(cenas)} cena(s)")
    return Dataset(scenes=cenas, config=indice.get("config", {}), root=raiz)
