# /src/models/__init__.py

"""
Tipos de domínio e modelos `torch.nn` do GP-NeRF.

Este pacote expõe apenas os tipos sem dependência de `src.utils.geometry`;
os campos e o modelo composto são importados dos próprios módulos
(`src.models.fields`, `src.models.gpnerf`).
"""

from .backbone import FeatureGridSet, MultiScaleFeatureExtractor, TeacherMap, block_gradient
from .camera import CameraModel
from .perception_head import PerceptionHead, SemanticFeatureMap2D
from .scene import Box, Scene, SceneConfig, ViewRecord

__all__ = [
    "CameraModel",
    "SceneConfig",
    "Box",
    "Scene",
    "ViewRecord",
    "FeatureGridSet",
    "TeacherMap",
    "MultiScaleFeatureExtractor",
    "block_gradient",
    "PerceptionHead",
    "SemanticFeatureMap2D",
]
