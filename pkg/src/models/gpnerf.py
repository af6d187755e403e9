# /src/models/gpnerf.py

"""
Modelo composto: extrator compartilhado + campos co-agregados + cabeça de percepção.

Os três grupos de parâmetros (extrator, transformers/MLPs, cabeça) são
expostos separadamente para o otimizador.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import torch
from torch import nn

from src.models.backbone import FeatureGridSet, MultiScaleFeatureExtractor, PASSO_BASE, extract_features
from src.models.camera import CameraModel
from src.models.fields import RadianceSemanticFields, render_rays
from src.models.perception_head import PerceptionHead, SemanticFeatureMap2D, predict_full
from src.utils.geometry import CameraStack, generate_rays, pixel_centers

logger = logging.getLogger(__name__)


@dataclass
class RenderedView:
    """
    Renderização completa de uma vista nova (inferência).

    Attributes:
        rgb (Tensor): H x W x 3 em [0, 1].
        sem_map (SemanticFeatureMap2D): mapa S^2D_sem totalmente renderizado.
        logits (Tensor): C x H x W.
    """

    rgb: torch.Tensor
    sem_map: SemanticFeatureMap2D
    logits: torch.Tensor

    @property
    def labels(self) -> torch.Tensor:
        return self.logits.argmax(dim=0)


class GPNeRF(nn.Module):
    def __init__(
        self,
        n_classes: int,
        d_rgb: int = 32,
        d_sem: int = 128,
        encoder_channels: Sequence[int] = (16, 32, 64, 128),
        depth: int = 1,
        n_heads: int = 1,
        pe_frequencies: int = 6,
    ):
        super().__init__()
        self.extractor = MultiScaleFeatureExtractor(encoder_channels, d_rgb, d_sem)
        self.fields = RadianceSemanticFields(d_rgb, d_sem, depth, n_heads, pe_frequencies)
        self.head = PerceptionHead(d_sem, n_classes)

    @property
    def n_classes(self) -> int:
        return self.head.n_classes

    def parameter_groups(self) -> Dict[str, List[nn.Parameter]]:
        return {
            "extractor": list(self.extractor.parameters()),
            "transformer": list(self.fields.parameters()),
            "head": list(self.head.parameters()),
        }

    def reset_head(self, n_classes: int):
        """Troca a cabeça (modo instância: K+1 saídas)."""
        parametro = next(self.head.parameters())
        self.head = PerceptionHead(self.head.d_sem, n_classes).to(dtype=parametro.dtype, device=parametro.device)
        logger.info(f"Cabeça de percepção recriada com {n_classes} saídas")


def build_model(config, n_classes: Optional[int] = None) -> GPNeRF:
    """Instancia o modelo a partir de um RunConfig."""
    return GPNeRF(
        n_classes=config.n_classes if n_classes is None else n_classes,
        d_rgb=config.d_rgb,
        d_sem=config.d_sem,
        encoder_channels=tuple(config.encoder_channels),
        depth=config.transformer_depth,
        n_heads=config.n_heads,
        pe_frequencies=config.pe_frequencies,
    )


def render_view(
    modelo: GPNeRF,
    ref_images,
    ref_cameras: Sequence[CameraModel],
    camera: CameraModel,
    n_samples: int,
    t_near: float,
    t_far: float,
    chunk: int = 1024,
) -> RenderedView:
    """
    Inferência de uma vista nova, sem nenhuma leitura da imagem alvo.

    RGB é renderizado em resolução de imagem; a semântica na grade de passo 4,
    uma célula por raio, e decodificada pela cabeça.
    """
    altura, largura = camera.height, camera.width
    parametro = next(modelo.parameters())
    with torch.no_grad():
        feats: FeatureGridSet = extract_features(modelo.extractor, ref_images)
        pilha = CameraStack.from_cameras(ref_cameras, dtype=parametro.dtype, device=parametro.device)

        raios_rgb = generate_rays(camera, pixel_centers(altura, largura), t_near, t_far, dtype=parametro.dtype)
        cor = render_rays(modelo.fields, raios_rgb, feats, pilha, n_samples, chunk=chunk).color

        h_f, w_f = altura // PASSO_BASE, largura // PASSO_BASE
        raios_sem = generate_rays(camera, pixel_centers(altura, largura, PASSO_BASE), t_near, t_far, dtype=parametro.dtype)
        sem = render_rays(modelo.fields, raios_sem, feats, pilha, n_samples, chunk=chunk).sem
        mapa = SemanticFeatureMap2D.from_rendered(sem.T.reshape(-1, h_f, w_f))
        logits = predict_full(modelo.head, mapa, (altura, largura))

    return RenderedView(rgb=cor.reshape(altura, largura, 3), sem_map=mapa, logits=logits)
