# /src/models/perception_head.py

"""
Cabeça de percepção sensível ao contexto.

O mapa semântico 2D (renderizado ou fundido com o professor) é dividido em 4
partes nos canais, uma por nível da pirâmide, e decodificado por um
decodificador em U do nível mais grosso para o mais fino:

    s'_i = ReLU . Conv(s_i + UpConv(s'_{i-1}))

seguido de projeção 1x1 para C classes e upsample bilinear para H x W.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import torch
import torch.nn.functional as F
from torch import nn

from src.models.backbone import N_NIVEIS, TeacherMap
from src.utils.exceptions import GeometryError, InferencePurityError, ShapeMismatchError

logger = logging.getLogger(__name__)


@dataclass
class SemanticFeatureMap2D:
    """
    Mapa de características semânticas na grade de passo 4.

    Attributes:
        features (Tensor): D_sem x H_f x W_f.
        rendered (Tensor): H_f x W_f booleano; True = renderizado, False = professor.
    """

    features: torch.Tensor
    rendered: torch.Tensor

    def __post_init__(self):
        if self.features.dim() != 3:
            raise ShapeMismatchError(f"Mapa semântico deve ser D x H x W, recebido {tuple(self.features.shape)}")
        if self.features.shape[0] % N_NIVEIS != 0:
            raise ShapeMismatchError(f"D_sem={self.features.shape[0]} não é divisível por {N_NIVEIS}")
        if tuple(self.rendered.shape) != tuple(self.features.shape[1:]):
            raise ShapeMismatchError("Máscara de proveniência não cobre o mapa")

    @property
    def grid_size(self) -> Tuple[int, int]:
        return int(self.features.shape[1]), int(self.features.shape[2])

    @property
    def fully_rendered(self) -> bool:
        return bool(self.rendered.all())

    @classmethod
    def from_rendered(cls, features: torch.Tensor) -> "SemanticFeatureMap2D":
        return cls(features=features, rendered=torch.ones(features.shape[1:], dtype=torch.bool, device=features.device))


def split_features(mapa) -> List[torch.Tensor]:
    """
    Divide o mapa em 4 fatias de canais iguais; a fatia k corresponde ao nível k
    da pirâmide e é reduzida por média ao tamanho nativo ceil(H_f / 2^k).

    Aceita SemanticFeatureMap2D, tensor D x H x W ou B x D x H x W. Devolve
    tensores B x D/4 x h_k x w_k.
    """
    features = mapa.features if isinstance(mapa, SemanticFeatureMap2D) else mapa
    if features.dim() == 3:
        features = features.unsqueeze(0)
    canais = features.shape[1]
    if canais % N_NIVEIS != 0:
        raise ShapeMismatchError(f"D_sem={canais} não é divisível por {N_NIVEIS}")
    altura, largura = features.shape[-2:]
    partes = []
    for nivel, fatia in enumerate(torch.chunk(features, N_NIVEIS, dim=1)):
        alvo = (math.ceil(altura / 2 ** nivel), math.ceil(largura / 2 ** nivel))
        partes.append(fatia if nivel == 0 else F.adaptive_avg_pool2d(fatia, alvo))
    return partes


class _BlocoConv(nn.Sequential):
    def __init__(self, canais: int):
        super().__init__(
            nn.Conv2d(canais, canais, kernel_size=3, padding=1),
            nn.ReLU(),
            nn.Conv2d(canais, canais, kernel_size=3, padding=1),
            nn.ReLU(),
        )


class PerceptionHead(nn.Module):
    """Decodificador em U sobre as 4 fatias do mapa semântico."""

    def __init__(self, d_sem: int, n_classes: int):
        super().__init__()
        if d_sem % N_NIVEIS != 0:
            raise ValueError("d_sem deve ser divisível por 4")
        self.d_sem = d_sem
        self.n_classes = n_classes
        canais = d_sem // N_NIVEIS
        self.blocos = nn.ModuleList([_BlocoConv(canais) for _ in range(N_NIVEIS)])
        self.up_convs = nn.ModuleList([nn.ConvTranspose2d(canais, canais, kernel_size=2, stride=2) for _ in range(N_NIVEIS - 1)])
        self.projecao = nn.Conv2d(canais, n_classes, kernel_size=1)

    def forward(self, partes: Sequence[torch.Tensor], image_size: Tuple[int, int]) -> torch.Tensor:
        return decode(self, partes, image_size)


def decode(head: PerceptionHead, partes: Sequence[torch.Tensor], image_size: Tuple[int, int]) -> torch.Tensor:
    """
    Decodifica as 4 partes (da mais fina para a mais grossa, como em `split_features`).

    Returns:
        Logits B x C x H x W (ou C x H x W se as partes não tiverem lote).
    """
    if len(partes) != N_NIVEIS:
        raise ShapeMismatchError(f"Esperadas {N_NIVEIS} partes, recebidas {len(partes)}")
    sem_lote = partes[0].dim() == 3
    if sem_lote:
        partes = [p.unsqueeze(0) for p in partes]

    anterior = head.blocos[-1](partes[-1])
    for nivel in range(N_NIVEIS - 2, -1, -1):
        atual = partes[nivel]
        subida = head.up_convs[nivel](anterior)
        if subida.shape[-2:] != atual.shape[-2:]:
            subida = F.interpolate(subida, size=atual.shape[-2:], mode="nearest")
        anterior = head.blocos[nivel](atual + subida)

    logits = head.projecao(anterior)
    logits = F.interpolate(logits, size=tuple(image_size), mode="bilinear", align_corners=False)
    return logits[0] if sem_lote else logits


def fuse_maps(rendered: torch.Tensor, cells: torch.Tensor, teacher: TeacherMap) -> SemanticFeatureMap2D:
    """
    Mapa fundido: o mapa do professor com as células renderizadas sobrescritas.

    Args:
        rendered: R x D_sem, características renderizadas (com gradiente).
        cells: R x 2 inteiros (linha, coluna) na grade de passo 4.
        teacher: mapa do professor (sem gradiente).

    Células repetidas: vale a última escrita; a quantidade é registrada em aviso.
    """
    base = teacher.features
    canais, altura, largura = base.shape
    if rendered.shape[0] == 0:
        return SemanticFeatureMap2D(features=base.clone(), rendered=torch.zeros((altura, largura), dtype=torch.bool))
    if rendered.shape[-1] != canais:
        raise ShapeMismatchError(f"Canais renderizados ({rendered.shape[-1]}) != professor ({canais})")

    cells = torch.as_tensor(cells, dtype=torch.int64, device=base.device).reshape(-1, 2)
    if bool(((cells[:, 0] < 0) | (cells[:, 0] >= altura) | (cells[:, 1] < 0) | (cells[:, 1] >= largura)).any()):
        raise GeometryError(f"Célula renderizada fora da grade {altura}x{largura}")

    plano = cells[:, 0] * largura + cells[:, 1]
    ordem = torch.arange(len(plano), device=base.device)
    ultima = torch.full((altura * largura,), -1, dtype=torch.int64, device=base.device)
    ultima = ultima.scatter_reduce(0, plano, ordem, reduce="amax")
    manter = ultima[plano] == ordem
    repetidas = int((~manter).sum())
    if repetidas:
        logger.warning(f"{repetidas} pixel(s) renderizado(s) repetido(s); mantida a última escrita")

    fundido = base.reshape(canais, -1).to(rendered.dtype).index_copy(1, plano[manter], rendered[manter].T)
    proveniencia = torch.zeros(altura * largura, dtype=torch.bool, device=base.device)
    proveniencia[plano[manter]] = True
    return SemanticFeatureMap2D(
        features=fundido.reshape(canais, altura, largura), rendered=proveniencia.reshape(altura, largura)
    )


def predict_full(head: PerceptionHead, mapa: SemanticFeatureMap2D, image_size: Tuple[int, int]) -> torch.Tensor:
    """
    Inferência: decode(split_features(mapa)) sobre um mapa totalmente renderizado.

    Raises:
        InferencePurityError: o mapa contém células vindas do professor.
    """
    if not mapa.fully_rendered:
        n_professor = int((~mapa.rendered).sum())
        raise InferencePurityError(f"Mapa de inferência contém {n_professor} célula(s) do professor")
    return decode(head, split_features(mapa), image_size)


def pixel_weights(mapa: SemanticFeatureMap2D, image_size: Tuple[int, int], peso_renderizado: float, apenas_renderizados: bool = False) -> torch.Tensor:
    """
    Pesos por pixel da entropia cruzada em resolução de imagem: células
    renderizadas recebem `peso_renderizado`, as do professor 1 (ou 0 com
    `apenas_renderizados`).
    """
    mascara = F.interpolate(mapa.rendered[None, None].float(), size=tuple(image_size), mode="nearest")[0, 0] > 0.5
    base = 0.0 if apenas_renderizados else 1.0
    return torch.where(
        mascara,
        torch.full(mascara.shape, float(peso_renderizado)),
        torch.full(mascara.shape, base),
    ).to(mapa.features.dtype)
