# /src/models/backbone.py

"""
Extrator de características multiescala compartilhado.

Codificador convolucional de 4 estágios (passos 4, 8, 16, 32) seguido de uma
FPN top-down. Produz, por vista:
    - F^rgb: características de baixo nível no passo 4 (D_rgb canais);
    - F^sem: 4 níveis da pirâmide (D_sem/4 canais cada) e a forma fundida num
      único mapa no passo 4 (D_sem canais), com os níveis reamostrados por
      vizinho mais próximo e concatenados do mais fino para o mais grosso.

O mesmo conjunto de pesos atende as vistas de referência e o caminho do
professor (vista nova), com o gradiente cortado neste último.
"""

import logging
from dataclasses import dataclass
from typing import List, Sequence

import torch
import torch.nn.functional as F
from torch import nn

logger = logging.getLogger(__name__)

N_NIVEIS = 4
PASSO_BASE = 4
PASSOS_PIRAMIDE = (4, 8, 16, 32)


@dataclass
class FeatureGridSet:
    """
    Características de N vistas.

    Attributes:
        rgb (Tensor): N x D_rgb x H/4 x W/4.
        pyramid (list[Tensor]): 4 níveis, N x D_sem/4 x H/s x W/s para s em (4, 8, 16, 32).
        sem (Tensor): N x D_sem x H/4 x W/4 (forma fundida).
    """

    rgb: torch.Tensor
    pyramid: List[torch.Tensor]
    sem: torch.Tensor

    @property
    def n_views(self) -> int:
        return self.rgb.shape[0]

    @property
    def stride(self) -> int:
        return PASSO_BASE

    def select(self, indices) -> "FeatureGridSet":
        return FeatureGridSet(
            rgb=self.rgb[indices], pyramid=[nivel[indices] for nivel in self.pyramid], sem=self.sem[indices]
        )


@dataclass
class TeacherMap:
    """S^2D_novel: mapa fundido extraído da imagem nova, sem gradiente."""

    features: torch.Tensor  # D_sem x H_f x W_f

    def __post_init__(self):
        if self.features.requires_grad:
            self.features = self.features.detach()

    @property
    def shape(self):
        return self.features.shape


class _BlockGradient(torch.autograd.Function):
    """Identidade no valor, derivada nula para trás."""

    @staticmethod
    def forward(ctx, x):
        return x.view_as(x)

    @staticmethod
    def backward(ctx, grad_saida):
        return torch.zeros_like(grad_saida)


def block_gradient(features):
    """
    Bloqueio de gradiente: devolve os mesmos valores, mas qualquer derivada a
    jusante em relação aos parâmetros a montante é exatamente zero.

    Aceita tensor ou FeatureGridSet.
    """
    if isinstance(features, FeatureGridSet):
        return FeatureGridSet(
            rgb=block_gradient(features.rgb),
            pyramid=[block_gradient(nivel) for nivel in features.pyramid],
            sem=block_gradient(features.sem),
        )
    return _BlockGradient.apply(features)


def _conv(entrada, saida, passo=1):
    return nn.Conv2d(entrada, saida, kernel_size=3, stride=passo, padding=1)


class MultiScaleFeatureExtractor(nn.Module):
    """Codificador convolucional + FPN (substitui ResNet-34 + FPN em escala reduzida)."""

    def __init__(self, encoder_channels: Sequence[int] = (16, 32, 64, 128), d_rgb: int = 32, d_sem: int = 128):
        super().__init__()
        if d_sem % N_NIVEIS != 0:
            raise ValueError("d_sem deve ser divisível por 4")
        c1, c2, c3, c4 = encoder_channels
        self.d_rgb = d_rgb
        self.d_sem = d_sem
        self.d_nivel = d_sem // N_NIVEIS

        self.estagios = nn.ModuleList([
            nn.Sequential(_conv(3, c1, 2), nn.ReLU(), _conv(c1, c1, 2), nn.ReLU()),
            nn.Sequential(_conv(c1, c2, 2), nn.ReLU(), _conv(c2, c2), nn.ReLU()),
            nn.Sequential(_conv(c2, c3, 2), nn.ReLU(), _conv(c3, c3), nn.ReLU()),
            nn.Sequential(_conv(c3, c4, 2), nn.ReLU(), _conv(c4, c4), nn.ReLU()),
        ])
        self.laterais = nn.ModuleList([nn.Conv2d(c, self.d_nivel, kernel_size=1) for c in encoder_channels])
        self.suavizacao = nn.ModuleList([_conv(self.d_nivel, self.d_nivel) for _ in encoder_channels])
        self.cabeca_rgb = nn.Conv2d(c1, d_rgb, kernel_size=1)

    def forward(self, imagens: torch.Tensor) -> FeatureGridSet:
        """
        Args:
            imagens: N x 3 x H x W em [0, 1].
        """
        x = imagens
        saidas_encoder = []
        for estagio in self.estagios:
            x = estagio(x)
            saidas_encoder.append(x)

        # Top-down: do nível mais grosso para o mais fino
        topo = self.laterais[-1](saidas_encoder[-1])
        piramide = [self.suavizacao[-1](topo)]
        for nivel in range(N_NIVEIS - 2, -1, -1):
            lateral = self.laterais[nivel](saidas_encoder[nivel])
            topo = lateral + F.interpolate(topo, size=lateral.shape[-2:], mode="nearest")
            piramide.insert(0, self.suavizacao[nivel](topo))

        rgb = self.cabeca_rgb(saidas_encoder[0])
        return FeatureGridSet(rgb=rgb, pyramid=piramide, sem=fuse_pyramid(piramide))


def fuse_pyramid(piramide: Sequence[torch.Tensor]) -> torch.Tensor:
    """Reamostra cada nível para o passo 4 (vizinho mais próximo) e concatena nos canais."""
    alvo = piramide[0].shape[-2:]
    partes = [piramide[0]] + [F.interpolate(nivel, size=alvo, mode="nearest") for nivel in piramide[1:]]
    return torch.cat(partes, dim=1)


def _validar_imagens(imagens) -> torch.Tensor:
    if isinstance(imagens, (list, tuple)):
        imagens = torch.stack([torch.as_tensor(img) for img in imagens])
    if imagens.dim() == 3:
        imagens = imagens.unsqueeze(0)
    if imagens.shape[-1] == 3 and imagens.shape[1] != 3:
        imagens = imagens.permute(0, 3, 1, 2)
    if not torch.isfinite(imagens).all():
        raise ValueError("Imagem de entrada contém valores não finitos")
    return imagens.contiguous()


def extract_features(extrator: MultiScaleFeatureExtractor, imagens) -> FeatureGridSet:
    """
    Extrai F^rgb e F^sem de uma lista de imagens H x W x 3 (ou tensor N x 3 x H x W).

    Raises:
        ValueError: entrada não finita.
    """
    parametro = next(extrator.parameters())
    lote = _validar_imagens(imagens).to(dtype=parametro.dtype, device=parametro.device)
    return extrator(lote)


def teacher_features(extrator: MultiScaleFeatureExtractor, imagem_nova) -> TeacherMap:
    """Mapa fundido da imagem da vista nova, com propagação de gradiente desligada."""
    with torch.no_grad():
        conjunto = extract_features(extrator, imagem_nova)
    return TeacherMap(features=conjunto.sem[0].detach())
