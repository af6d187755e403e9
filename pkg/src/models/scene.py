# /src/models/scene.py

"""
Tipos de dados das cenas sintéticas: configuração, caixas, cena e registro de vista.

As cenas são salas (paredes implícitas com classe 0) contendo caixas alinhadas
aos eixos, cada uma com classe semântica, identificador de instância e cor base.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from src.models.camera import CameraModel
from src.utils.exceptions import ConfigError

BACKGROUND_CLASS = 0


@dataclass(frozen=True)
class SceneConfig:
    """
    Parâmetros da geração procedural.

    Attributes:
        room_extent (tuple): Dimensões da sala (x, y, z), centrada na origem.
        n_objects (int): Quantidade de caixas.
        class_palette (list): Pares (class_id, cor_base); deve conter a classe 0.
        image_size (tuple): (H, W) em pixels.
        seed (int): Semente da geração.
    """

    room_extent: Tuple[float, float, float]
    n_objects: int
    class_palette: List[Tuple[int, Tuple[float, float, float]]]
    image_size: Tuple[int, int]
    seed: int = 0
    fov_degrees: float = 60.0
    t_near: float = 0.1
    t_far: float = 12.0

    def __post_init__(self):
        if self.n_objects < 0:
            raise ConfigError("n_objects deve ser >= 0")
        altura, largura = self.image_size
        if altura < 8 or largura < 8:
            raise ConfigError("H e W devem ser >= 8")
        ids = [cid for cid, _ in self.class_palette]
        if BACKGROUND_CLASS not in ids:
            raise ConfigError("A paleta deve conter a classe de fundo 0")
        if len(set(ids)) != len(ids):
            raise ConfigError("class_id repetido na paleta")
        for cid, cor in self.class_palette:
            if len(cor) != 3 or min(cor) < 0.0 or max(cor) > 1.0:
                raise ConfigError(f"Cor da classe {cid} fora de [0,1]^3: {cor}")
        if min(self.room_extent) <= 0:
            raise ConfigError("room_extent deve ser positivo")

    def color_of(self, class_id: int) -> Tuple[float, float, float]:
        for cid, cor in self.class_palette:
            if cid == class_id:
                return tuple(cor)
        raise ConfigError(f"Classe {class_id} ausente da paleta")


@dataclass(frozen=True)
class Box:
    """Caixa alinhada aos eixos."""

    min_corner: Tuple[float, float, float]
    max_corner: Tuple[float, float, float]
    class_id: int
    instance_id: int
    base_color: Tuple[float, float, float]

    @property
    def center(self) -> np.ndarray:
        return (np.asarray(self.min_corner) + np.asarray(self.max_corner)) / 2.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "min_corner": list(self.min_corner),
            "max_corner": list(self.max_corner),
            "class_id": int(self.class_id),
            "instance_id": int(self.instance_id),
            "base_color": list(self.base_color),
        }

    @classmethod
    def from_dict(cls, dados: Dict[str, Any]) -> "Box":
        return cls(
            min_corner=tuple(float(v) for v in dados["min_corner"]),
            max_corner=tuple(float(v) for v in dados["max_corner"]),
            class_id=int(dados["class_id"]),
            instance_id=int(dados["instance_id"]),
            base_color=tuple(float(v) for v in dados["base_color"]),
        )


@dataclass(frozen=True)
class Scene:
    """Sala com caixas; paredes, piso e teto são planos implícitos com classe 0."""

    config: SceneConfig
    boxes: Tuple[Box, ...] = field(default_factory=tuple)

    @property
    def room_min(self) -> np.ndarray:
        return -np.asarray(self.config.room_extent, dtype=np.float64) / 2.0

    @property
    def room_max(self) -> np.ndarray:
        return np.asarray(self.config.room_extent, dtype=np.float64) / 2.0

    @property
    def centroid(self) -> np.ndarray:
        """Centro médio das caixas (ou da sala, se vazia)."""
        if not self.boxes:
            return np.zeros(3)
        return np.mean([caixa.center for caixa in self.boxes], axis=0)

    @property
    def n_instances(self) -> int:
        return len(self.boxes)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "room_extent": list(self.config.room_extent),
            "n_objects": self.config.n_objects,
            "class_palette": [[cid, list(cor)] for cid, cor in self.config.class_palette],
            "image_size": list(self.config.image_size),
            "seed": self.config.seed,
            "fov_degrees": self.config.fov_degrees,
            "t_near": self.config.t_near,
            "t_far": self.config.t_far,
            "boxes": [caixa.to_dict() for caixa in self.boxes],
        }

    @classmethod
    def from_dict(cls, dados: Dict[str, Any]) -> "Scene":
        config = SceneConfig(
            room_extent=tuple(float(v) for v in dados["room_extent"]),
            n_objects=int(dados["n_objects"]),
            class_palette=[(int(cid), tuple(float(c) for c in cor)) for cid, cor in dados["class_palette"]],
            image_size=tuple(int(v) for v in dados["image_size"]),
            seed=int(dados["seed"]),
            fov_degrees=float(dados.get("fov_degrees", 60.0)),
            t_near=float(dados.get("t_near", 0.1)),
            t_far=float(dados.get("t_far", 12.0)),
        )
        return cls(config=config, boxes=tuple(Box.from_dict(b) for b in dados["boxes"]))


@dataclass
class ViewRecord:
    """
    Verdade de campo de uma vista.

    Attributes:
        rgb (np.ndarray): H x W x 3 em [0, 1].
        depth (np.ndarray): H x W, distância ao longo do raio (positiva).
        semantic (np.ndarray): H x W com ids de classe.
        instance (np.ndarray): H x W com ids de instância (0 = fundo).
        camera (CameraModel): Câmera da vista.
    """

    rgb: np.ndarray
    depth: np.ndarray
    semantic: np.ndarray
    instance: np.ndarray
    camera: CameraModel
    index: Optional[int] = None

    @property
    def image_size(self) -> Tuple[int, int]:
        return self.rgb.shape[0], self.rgb.shape[1]
