# /src/models/camera.py

"""
Modelo de câmera pinhole (convenção OpenCV: +z para frente, +x à direita, +y para baixo).
"""

from dataclasses import dataclass, field
from typing import Any, Dict

import numpy as np

from src.utils.exceptions import GeometryError

TOLERANCIA_ORTONORMAL = 1e-6


@dataclass
class CameraModel:
    """
    Intrínsecos pinhole mais pose câmera->mundo.

    Attributes:
        fx, fy (float): Distâncias focais em pixels.
        cx, cy (float): Ponto principal em pixels (coordenadas contínuas).
        cam_to_world (np.ndarray): Transformação rígida 4x4.
        width, height (int): Dimensões da imagem em pixels.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    cam_to_world: np.ndarray = field(default_factory=lambda: np.eye(4))
    width: int = 0
    height: int = 0

    def __post_init__(self):
        self.cam_to_world = np.asarray(self.cam_to_world, dtype=np.float64).reshape(4, 4)
        if self.fx <= 0 or self.fy <= 0:
            raise GeometryError(f"Distâncias focais devem ser positivas (fx={self.fx}, fy={self.fy})")
        rotacao = self.rotation
        erro = np.abs(rotacao.T @ rotacao - np.eye(3)).max()
        if erro > TOLERANCIA_ORTONORMAL:
            raise GeometryError(f"Bloco de rotação não ortonormal (erro {erro:.2e})")

    def __repr__(self) -> str:
        return f"<CameraModel centro={np.round(self.center, 3).tolist()} f=({self.fx:.1f}, {self.fy:.1f})>"

    @property
    def rotation(self) -> np.ndarray:
        return self.cam_to_world[:3, :3]

    @property
    def center(self) -> np.ndarray:
        """Centro óptico no mundo."""
        return self.cam_to_world[:3, 3]

    @property
    def forward(self) -> np.ndarray:
        """Eixo óptico (+z da câmera) em coordenadas do mundo."""
        return self.cam_to_world[:3, 2]

    @property
    def world_to_cam(self) -> np.ndarray:
        rotacao = self.rotation
        inversa = np.eye(4)
        inversa[:3, :3] = rotacao.T
        inversa[:3, 3] = -rotacao.T @ self.center
        return inversa

    @property
    def intrinsics(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    @classmethod
    def look_at(cls, posicao, alvo, fx, fy, cx, cy, width=0, height=0, up=(0.0, 0.0, 1.0)):
        """Cria uma câmera em `posicao` olhando para `alvo` (mundo com +z para cima)."""
        posicao = np.asarray(posicao, dtype=np.float64)
        frente = np.asarray(alvo, dtype=np.float64) - posicao
        norma = np.linalg.norm(frente)
        if norma < 1e-12:
            raise GeometryError("Posição e alvo coincidem")
        frente /= norma
        direita = np.cross(frente, np.asarray(up, dtype=np.float64))
        if np.linalg.norm(direita) < 1e-9:
            raise GeometryError("Direção de visada paralela ao vetor 'up'")
        direita /= np.linalg.norm(direita)
        baixo = np.cross(frente, direita)
        pose = np.eye(4)
        pose[:3, 0] = direita
        pose[:3, 1] = baixo
        pose[:3, 2] = frente
        pose[:3, 3] = posicao
        return cls(fx=fx, fy=fy, cx=cx, cy=cy, cam_to_world=pose, width=width, height=height)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "cam_to_world": self.cam_to_world.tolist(),
            "fx": float(self.fx),
            "fy": float(self.fy),
            "cx": float(self.cx),
            "cy": float(self.cy),
            "width": int(self.width),
            "height": int(self.height),
        }

    @classmethod
    def from_dict(cls, dados: Dict[str, Any]) -> "CameraModel":
        return cls(
            fx=float(dados["fx"]),
            fy=float(dados["fy"]),
            cx=float(dados["cx"]),
            cy=float(dados["cy"]),
            cam_to_world=np.array(dados["cam_to_world"], dtype=np.float64),
            width=int(dados.get("width", 0)),
            height=int(dados.get("height", 0)),
        )
