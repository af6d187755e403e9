# /src/utils/losses.py

"""
Objetivos de treino.

    L_all = a1 * L_rgb + a2 * L_sem + a3 * L_SD + a4 * L_DG

- L_rgb: soma dos erros quadráticos de cor por raio.
- L_sem: entropia cruzada por pixel (pesos por pixel opcionais).
- L_SD: destilação 2D, 1 - cos entre a semântica renderizada e o professor.
- L_DG: destilação guiada por profundidade, por ponto ao longo do raio.

As funções de destilação aceitam um dicionário `counts` opcional onde
acumulam as anomalias toleradas (vetores de norma zero, raios sem profundidade).
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Union

import torch
import torch.nn.functional as F

from src.utils.exceptions import ConfigError, LabelError, ShapeMismatchError
from src.utils.geometry import depth_to_sample_index

logger = logging.getLogger(__name__)

EPS_COSSENO = 1e-8
TERMOS = ("rgb", "sem", "sd", "dg")
COLUNAS_LOG = ("step", "lr", "L_rgb", "L_sem", "L_SD", "L_DG", "L_all")


@dataclass
class LossWeights:
    """Pesos a1..a4 (não negativos)."""

    rgb: float = 1.0
    sem: float = 1.0
    sd: float = 0.1
    dg: float = 0.1

    def validate(self):
        for nome in TERMOS:
            valor = getattr(self, nome)
            if not math.isfinite(valor) or valor < 0:
                raise ConfigError(f"Peso da perda '{nome}' inválido: {valor}")

    def as_dict(self) -> Dict[str, float]:
        return {nome: float(getattr(self, nome)) for nome in TERMOS}


@dataclass
class LossReport:
    """Valores escalares de cada termo e contagens de anomalias de um passo."""

    rgb: float = 0.0
    sem: float = 0.0
    sd: float = 0.0
    dg: float = 0.0
    total: float = 0.0
    rgb_mean: float = 0.0
    counts: Dict[str, int] = field(default_factory=dict)

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in (self.rgb, self.sem, self.sd, self.dg, self.total))

    def as_dict(self) -> Dict[str, object]:
        return {
            "L_rgb": self.rgb,
            "L_sem": self.sem,
            "L_SD": self.sd,
            "L_DG": self.dg,
            "L_all": self.total,
            "rgb_mean": self.rgb_mean,
            "counts": dict(self.counts),
        }

    def log_row(self, step: int, lr: float) -> Dict[str, object]:
        """Linha do CSV de treino."""
        return dict(zip(COLUNAS_LOG, (step, lr, self.rgb, self.sem, self.sd, self.dg, self.total)))


def _contar(counts: Optional[Dict[str, int]], chave: str, quantidade: int):
    if counts is not None and quantidade:
        counts[chave] = counts.get(chave, 0) + int(quantidade)


def photometric_loss(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """sum_r ||C_pred(r) - C_gt(r)||^2."""
    if pred.shape != gt.shape:
        raise ShapeMismatchError(f"Cor prevista {tuple(pred.shape)} != verdade {tuple(gt.shape)}")
    return ((pred - gt.to(pred.dtype)) ** 2).sum()


def semantic_ce_loss(logits: torch.Tensor, labels: torch.Tensor, weights: Optional[torch.Tensor] = None) -> torch.Tensor:
    """
    -sum_pixels w * log softmax(logits)[label], estável via log-sum-exp.

    Args:
        logits: C x H x W, B x C x H x W ou P x C.
        labels: H x W, B x H x W ou P (inteiros em [0, C)).
        weights: mesmo formato de `labels` (padrão: 1).
    """
    if logits.dim() == 2:
        planos = logits
        n_classes = logits.shape[1]
    else:
        n_classes = logits.shape[-3]
        planos = logits.movedim(-3, -1).reshape(-1, n_classes)
    rotulos = torch.as_tensor(labels, device=logits.device).reshape(-1).to(torch.int64)
    if rotulos.shape[0] != planos.shape[0]:
        raise ShapeMismatchError(f"{planos.shape[0]} pixels de logits para {rotulos.shape[0]} rótulos")
    if rotulos.numel() and (int(rotulos.min()) < 0 or int(rotulos.max()) >= n_classes):
        raise LabelError(f"Rótulo fora de [0, {n_classes}): min={int(rotulos.min())}, max={int(rotulos.max())}")
    nll = -F.log_softmax(planos, dim=-1).gather(1, rotulos.unsqueeze(1)).squeeze(1)
    if weights is not None:
        nll = nll * torch.as_tensor(weights, dtype=nll.dtype, device=nll.device).reshape(-1)
    return nll.sum()


def cosine_similarity(a: torch.Tensor, b: torch.Tensor, eps: float = EPS_COSSENO) -> torch.Tensor:
    """Cosseno no último eixo com normas protegidas por eps."""
    norma_a = (a * a).sum(dim=-1).clamp_min(eps * eps).sqrt()
    norma_b = (b * b).sum(dim=-1).clamp_min(eps * eps).sqrt()
    return (a * b).sum(dim=-1) / (norma_a * norma_b)


def _norma_zero(a: torch.Tensor, eps: float = EPS_COSSENO) -> torch.Tensor:
    return (a.detach() * a.detach()).sum(dim=-1) < eps * eps


def semantic_distill_loss(student: torch.Tensor, teacher: torch.Tensor, counts: Optional[Dict[str, int]] = None) -> torch.Tensor:
    """
    sum_r [1 - cos(S_sem(r), S_novel(r))].

    Args:
        student: R x D_sem, semântica renderizada.
        teacher: R x D_sem, células do professor nos mesmos pixels.
    """
    if student.shape != teacher.shape:
        raise ShapeMismatchError(f"Aluno {tuple(student.shape)} != professor {tuple(teacher.shape)}")
    teacher = teacher.detach().to(student.dtype)
    zeros = int((_norma_zero(student) | _norma_zero(teacher)).sum())
    if zeros:
        logger.warning(f"L_SD: {zeros} par(es) com norma zero (contribuem 1)")
        _contar(counts, "sd_zero_norm", zeros)
    return (1.0 - cosine_similarity(student, teacher)).sum()


def depth_guided_distill_loss(
    point_sem: torch.Tensor,
    ts: torch.Tensor,
    gt_depth: Optional[torch.Tensor],
    teacher: torch.Tensor,
    t_near: float,
    t_far: float,
    n_p: int = 2,
    counts: Optional[Dict[str, int]] = None,
) -> torch.Tensor:
    """
    Destilação por ponto com faixas em unidades de índice de amostra:
        |i - i_d| <  N_p -> 1 - cos
        |i - i_d| >  N_p -> max(0, cos)
        |i - i_d| == N_p -> 0

    Args:
        point_sem: R x M x D_sem (f^sem por ponto).
        ts: R x M.
        gt_depth: R (profundidade ao longo do raio); None ou valores não
            finitos descartam os raios correspondentes.
        teacher: R x D_sem.
    """
    if gt_depth is None:
        logger.warning("L_DG ignorada: profundidade de verdade ausente")
        _contar(counts, "dg_missing_depth", point_sem.shape[0])
        return point_sem.sum() * 0.0

    gt_depth = torch.as_tensor(gt_depth, dtype=ts.dtype, device=ts.device).reshape(-1)
    valido = torch.isfinite(gt_depth)
    faltando = int((~valido).sum())
    if faltando:
        logger.warning(f"L_DG: {faltando} raio(s) sem profundidade ignorado(s)")
        _contar(counts, "dg_missing_depth", faltando)
    if not bool(valido.any()):
        return point_sem.sum() * 0.0

    point_sem, ts, teacher = point_sem[valido], ts[valido], teacher[valido].detach().to(point_sem.dtype)
    resultado = depth_to_sample_index(ts, gt_depth[valido], t_near, t_far)
    _contar(counts, "dg_clamped_depth", resultado.n_clamped)

    indices = torch.arange(ts.shape[-1], device=ts.device).unsqueeze(0)
    distancia = (indices - resultado.indices.unsqueeze(-1)).abs()
    cos = cosine_similarity(point_sem, teacher.unsqueeze(1).expand_as(point_sem))
    perto = (distancia < n_p).to(cos.dtype)
    longe = (distancia > n_p).to(cos.dtype)
    return (perto * (1.0 - cos) + longe * torch.relu(cos)).sum()


def total_loss(termos: Union[LossReport, Mapping[str, torch.Tensor]], pesos: LossWeights):
    """a1 * L_rgb + a2 * L_sem + a3 * L_SD + a4 * L_DG (termos ausentes contam zero)."""
    pesos.validate()
    if isinstance(termos, LossReport):
        termos = {nome: getattr(termos, nome) for nome in TERMOS}
    total = 0.0
    for nome in TERMOS:
        valor = termos.get(nome)
        if valor is not None:
            total = total + getattr(pesos, nome) * valor
    return total


def build_report(termos: Mapping[str, torch.Tensor], pesos: LossWeights, n_rays: int = 0, counts=None) -> LossReport:
    """Converte os termos do passo em LossReport (L_all recalculado pela mesma soma ponderada)."""
    valores = {nome: float(termos[nome].detach()) if nome in termos else 0.0 for nome in TERMOS}
    relatorio = LossReport(counts=dict(counts or {}), **valores)
    relatorio.total = float(total_loss(relatorio, pesos))
    relatorio.rgb_mean = relatorio.rgb / n_rays if n_rays else 0.0
    return relatorio
