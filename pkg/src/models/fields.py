# /src/models/fields.py

"""
Campos co-agregados e renderização volumétrica conjunta.

- Field-Aggregation Transformer (FAT): funde, para cada ponto amostrado, as
  características projetadas das N vistas de referência no campo de radiância
  e exporta os pesos A_FAT (por ponto, sobre as vistas).
- Campo semântico: reutiliza A_FAT (atenção compartilhada) sobre as
  características semânticas projetadas; não tem parâmetros próprios.
- Ray-Aggregation Transformer (RAT): autoatenção ao longo do raio; exporta
  A_RAT (por raio, sobre os M pontos), que faz o papel dos pesos de
  renderização para cor e para as características semânticas.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional

import torch
from torch import nn

from src.models.backbone import FeatureGridSet
from src.utils.geometry import (
    CameraStack,
    RayBatch,
    SampledPoints,
    bilinear_sample,
    project,
    relative_directions,
    sample_points,
)

logger = logging.getLogger(__name__)


# ========== TIPOS ==========

@dataclass
class AttentionRecord:
    """
    Pesos exportados pelos transformers.

    Attributes:
        fat (Tensor): (R*M) x N, linhas somam 1 sobre as vistas válidas (vistas mascaradas = 0).
        rat (Tensor): R x M, linhas somam 1 sobre os pontos.
    """

    fat: torch.Tensor
    rat: torch.Tensor


@dataclass
class FieldSamples:
    """f^rgb (R x M x D_rgb) e f^sem (R x M x D_sem) dos pontos amostrados."""

    rgb: torch.Tensor
    sem: torch.Tensor


@dataclass
class ProjectedFeatures:
    """Características das vistas de referência nas projeções dos pontos."""

    rgb: torch.Tensor  # R x M x N x D_rgb
    sem: torch.Tensor  # R x M x N x D_sem
    mask: torch.Tensor  # R x M x N
    rel_dirs: torch.Tensor  # R x M x N x 3


@dataclass
class FieldAggregation:
    """Saída do FAT."""

    rgb: torch.Tensor  # R x M x D_rgb
    attention: torch.Tensor  # R x M x N
    positional: torch.Tensor  # R x M x N x D_rgb
    point_valid: torch.Tensor  # R x M


@dataclass
class RenderedRayBatch:
    """
    Resultado da renderização de um lote de raios.

    Attributes:
        color (Tensor): R x 3 em [0, 1].
        sem (Tensor): R x D_sem, S^2D_sem(r).
        attention (AttentionRecord): pesos do mesmo passo direto.
        point_sem (Tensor): R x M x D_sem, f^sem por ponto (perda guiada por profundidade).
        ts (Tensor): R x M.
        point_valid (Tensor): R x M, pontos vistos por ao menos uma vista.
    """

    color: torch.Tensor
    sem: torch.Tensor
    attention: AttentionRecord
    point_sem: torch.Tensor
    ts: torch.Tensor
    point_valid: torch.Tensor

    def __len__(self) -> int:
        return self.color.shape[0]


# ========== CODIFICAÇÃO POSICIONAL ==========

def positional_encoding(x: torch.Tensor, n_freqs: int) -> torch.Tensor:
    """Codificação senoidal [x, sin(2^k pi x), cos(2^k pi x)] para k < n_freqs."""
    if n_freqs <= 0:
        return x
    frequencias = (2.0 ** torch.arange(n_freqs, dtype=x.dtype, device=x.device)) * math.pi
    angulos = x.unsqueeze(-1) * frequencias
    senos = torch.sin(angulos).flatten(-2)
    cossenos = torch.cos(angulos).flatten(-2)
    return torch.cat([x, senos, cossenos], dim=-1)


def encoding_dim(n_freqs: int, dim: int = 3) -> int:
    return dim * (1 + 2 * max(n_freqs, 0))


def _mlp(entrada: int, oculta: int, saida: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(entrada, oculta), nn.ReLU(), nn.Linear(oculta, saida))


# ========== PROJEÇÃO NAS VISTAS DE REFERÊNCIA ==========

def project_reference_features(
    pontos: SampledPoints, ref_feats: FeatureGridSet, cameras: CameraStack, direcoes_alvo: torch.Tensor
) -> ProjectedFeatures:
    """Projeta cada ponto em cada vista e interpola F^rgb e F^sem bilinearmente."""
    n_raios, n_pontos, _ = pontos.positions.shape
    uv, _, na_frente = project(pontos.positions, cameras)  # N x R x M x 2
    rgb, valido_rgb = bilinear_sample(ref_feats.rgb, uv.reshape(len(cameras), -1, 2), passo=ref_feats.stride)
    sem, _ = bilinear_sample(ref_feats.sem, uv.reshape(len(cameras), -1, 2), passo=ref_feats.stride)
    mascara = valido_rgb.reshape(len(cameras), n_raios, n_pontos) & na_frente
    peso = mascara.to(rgb.dtype)

    def por_ponto(t):
        return t.reshape(len(cameras), n_raios, n_pontos, -1).permute(1, 2, 0, 3)

    rgb = por_ponto(rgb) * peso.permute(1, 2, 0).unsqueeze(-1)
    sem = por_ponto(sem) * peso.permute(1, 2, 0).unsqueeze(-1)
    rel_dirs = relative_directions(pontos.positions, direcoes_alvo, cameras)
    return ProjectedFeatures(rgb=rgb, sem=sem, mask=mascara.permute(1, 2, 0), rel_dirs=rel_dirs)


def masked_view_mean(x: torch.Tensor, mascara: torch.Tensor) -> torch.Tensor:
    """Média sobre as vistas válidas (zero quando nenhuma é válida)."""
    peso = mascara.to(x.dtype).unsqueeze(-1)
    contagem = peso.sum(dim=-2).clamp_min(1.0)
    return (x * peso).sum(dim=-2) / contagem


# ========== FAT ==========

class FieldAggregationTransformer(nn.Module):
    """
    Transformer de agregação entre vistas (View-Transformer).

    Logits: f_A(K - Q + P), um escalar por (ponto, vista, cabeça); softmax sobre as vistas.
    Saída: f_rgb(sum_views A * (V + P)).
    """

    def __init__(self, d_rgb: int, n_heads: int = 1):
        super().__init__()
        self.d_rgb = d_rgb
        self.n_heads = n_heads
        self.f_q = nn.Linear(d_rgb, d_rgb)
        self.f_k = nn.Linear(d_rgb, d_rgb)
        self.f_v = nn.Linear(d_rgb, d_rgb)
        self.f_p = _mlp(3, d_rgb, d_rgb)
        self.f_a = nn.Linear(d_rgb, n_heads)
        self.f_rgb = _mlp(d_rgb, d_rgb, d_rgb)

    def forward(self, x0, x_rgb, rel_dirs, mascara) -> FieldAggregation:
        q = self.f_q(x0)
        k = self.f_k(x_rgb)
        v = self.f_v(x_rgb)
        p = self.f_p(rel_dirs)
        logits = self.f_a(k - q.unsqueeze(-2) + p)  # R x M x N x h

        mascara_h = mascara.unsqueeze(-1).expand_as(logits)
        ponto_valido = mascara.any(dim=-1)
        # pontos sem vista válida: logits neutros, pesos zerados depois
        sem_vista = (~ponto_valido).unsqueeze(-1).unsqueeze(-1)
        logits = logits.masked_fill(~mascara_h & ~sem_vista, float("-inf"))
        logits = logits.masked_fill(sem_vista.expand_as(logits), 0.0)
        pesos = torch.softmax(logits, dim=-2) * mascara_h.to(logits.dtype)

        por_canal = pesos.repeat_interleave(self.d_rgb // self.n_heads, dim=-1)
        agregado = ((v + p) * por_canal).sum(dim=-2)
        saida = self.f_rgb(agregado) * ponto_valido.unsqueeze(-1).to(agregado.dtype)
        return FieldAggregation(
            rgb=saida, attention=pesos.mean(dim=-1), positional=p, point_valid=ponto_valido
        )


def fat_aggregate(fat: FieldAggregationTransformer, projetadas: ProjectedFeatures, x0: Optional[torch.Tensor] = None):
    """
    Agrega o campo de radiância nos pontos.

    A consulta inicial X0 é a média das características projetadas válidas
    (sem parâmetros e invariante à ordem das vistas).

    Returns:
        (FieldAggregation, A_FAT com formato (R*M) x N)
    """
    if x0 is None:
        x0 = masked_view_mean(projetadas.rgb, projetadas.mask)
    agregacao = fat(x0, projetadas.rgb, projetadas.rel_dirs, projetadas.mask)
    n_vistas = agregacao.attention.shape[-1]
    return agregacao, agregacao.attention.reshape(-1, n_vistas)


def semantic_field(a_fat: torch.Tensor, x_sem: torch.Tensor, positional: torch.Tensor) -> torch.Tensor:
    """
    Campo semântico por atenção compartilhada:
        f^sem = sum_views (X_sem + P') * A'
    com P' = P repetido 4x nos canais (repeat_interleave) e A' = A_FAT
    replicado em todos os D_sem canais.

    Args:
        a_fat: R x M x N (ou (R*M) x N).
        x_sem: R x M x N x D_sem.
        positional: R x M x N x D_rgb.
    """
    n_raios, n_pontos, n_vistas, d_sem = x_sem.shape
    a_fat = a_fat.reshape(n_raios, n_pontos, n_vistas)
    fator = d_sem // positional.shape[-1]
    p_linha = positional.repeat_interleave(fator, dim=-1)
    a_linha = a_fat.unsqueeze(-1).expand(n_raios, n_pontos, n_vistas, d_sem)
    return ((x_sem + p_linha) * a_linha).sum(dim=-2)


# ========== RAT ==========

class RayAggregationTransformer(nn.Module):
    """Transformer ao longo do raio (Ray-Transformer) com atenção por produto escalar."""

    def __init__(self, d_rgb: int, d_pos: int, d_dir: int, n_heads: int = 1):
        super().__init__()
        self.d_rgb = d_rgb
        self.n_heads = n_heads
        self.f_p = _mlp(d_rgb + d_pos + d_dir, d_rgb, d_rgb)
        self.f_q = nn.Linear(d_rgb, d_rgb)
        self.f_k = nn.Linear(d_rgb, d_rgb)
        self.f_v = nn.Linear(d_rgb, d_rgb)
        self.f_rgb = _mlp(d_rgb, d_rgb, d_rgb)

    def forward(self, f_rgb, pos_pe, dir_pe):
        n_raios, n_pontos, _ = f_rgb.shape
        x = self.f_p(torch.cat([f_rgb, dir_pe, pos_pe], dim=-1))
        d_cabeca = self.d_rgb // self.n_heads

        def cabecas(t):
            return t.reshape(n_raios, n_pontos, self.n_heads, d_cabeca).transpose(1, 2)

        q, k, v = cabecas(self.f_q(x)), cabecas(self.f_k(x)), cabecas(self.f_v(x))
        atencao = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(d_cabeca), dim=-1)  # R x h x M x M
        saida = (atencao @ v).transpose(1, 2).reshape(n_raios, n_pontos, self.d_rgb)
        s2d_rgb = self.f_rgb(saida)
        # média sobre as linhas de consulta (e cabeças): um vetor de pesos por raio
        a_rat = atencao.mean(dim=(1, 2))
        return s2d_rgb, a_rat


def rat_aggregate(
    rat: RayAggregationTransformer,
    f_rgb: torch.Tensor,
    coords: torch.Tensor,
    view_dir: torch.Tensor,
    n_freqs: int,
    pe_enabled: bool = True,
):
    """
    Renderização ao longo do raio.

    Args:
        f_rgb: R x M x D_rgb.
        coords: R x M x 3 coordenadas dos pontos.
        view_dir: R x 3 direção do raio alvo.
    Returns:
        (S^2D_rgb: R x M x D_rgb, A_RAT: R x M)
    """
    pos_pe = positional_encoding(coords, n_freqs)
    dir_pe = positional_encoding(view_dir, n_freqs).unsqueeze(1).expand(-1, coords.shape[1], -1)
    if not pe_enabled:
        pos_pe = torch.zeros_like(pos_pe)
        dir_pe = torch.zeros_like(dir_pe)
    return rat(f_rgb, pos_pe, dir_pe)


def render_color(color_mlp: nn.Module, s2d_rgb: torch.Tensor) -> torch.Tensor:
    """C(r) = sigmoid(MLP(Mean_M S^2D_rgb(r)))."""
    return torch.sigmoid(color_mlp(s2d_rgb.mean(dim=1)))


def aggregate_semantic(a_rat: torch.Tensor, f_sem: torch.Tensor) -> torch.Tensor:
    """Valor pré-MLP de S^2D_sem: sum_M A'_RAT * f^sem, com A' replicado nos D_sem canais."""
    a_linha = a_rat.unsqueeze(-1).expand_as(f_sem)
    return (a_linha * f_sem).sum(dim=1)


def render_semantic(sem_mlp: nn.Module, a_rat: torch.Tensor, f_sem: torch.Tensor) -> torch.Tensor:
    """S^2D_sem(r) = MLP(sum_M A_RAT * f^sem)."""
    return sem_mlp(aggregate_semantic(a_rat, f_sem))


# ========== COMPOSIÇÃO ==========

class RadianceSemanticFields(nn.Module):
    """Pilha FAT/RAT (alternada quando depth > 1) e as MLPs de cor e de semântica."""

    def __init__(self, d_rgb: int = 32, d_sem: int = 128, depth: int = 1, n_heads: int = 1, pe_frequencies: int = 6):
        super().__init__()
        if d_sem % d_rgb != 0:
            raise ValueError("d_sem deve ser múltiplo de d_rgb")
        self.d_rgb = d_rgb
        self.d_sem = d_sem
        self.pe_frequencies = pe_frequencies
        self.pe_enabled = True
        d_pe = encoding_dim(pe_frequencies)
        self.fat_blocks = nn.ModuleList([FieldAggregationTransformer(d_rgb, n_heads) for _ in range(depth)])
        self.rat_blocks = nn.ModuleList([RayAggregationTransformer(d_rgb, d_pe, d_pe, n_heads) for _ in range(depth)])
        self.color_mlp = _mlp(d_rgb, d_rgb, 3)
        self.sem_mlp = _mlp(d_sem, d_sem, d_sem)

    def forward(
        self,
        rays: RayBatch,
        ref_feats: FeatureGridSet,
        cameras: CameraStack,
        n_samples: int,
        stratified: bool = False,
        seed: Optional[int] = None,
        freeze_attention: bool = False,
    ) -> RenderedRayBatch:
        pontos = sample_points(rays, n_samples, stratified=stratified, seed=seed)
        projetadas = project_reference_features(pontos, ref_feats, cameras, rays.directions)
        pontos.rel_dirs = projetadas.rel_dirs

        consulta = None
        for fat, rat in zip(self.fat_blocks, self.rat_blocks):
            agregacao, a_fat = fat_aggregate(fat, projetadas, consulta)
            s2d_rgb, a_rat = rat_aggregate(
                rat, agregacao.rgb, pontos.positions, rays.directions, self.pe_frequencies, self.pe_enabled
            )
            consulta = s2d_rgb

        a_fat_sem = a_fat.detach() if freeze_attention else a_fat
        a_rat_sem = a_rat.detach() if freeze_attention else a_rat
        f_sem = semantic_field(a_fat_sem, projetadas.sem, agregacao.positional)
        return RenderedRayBatch(
            color=render_color(self.color_mlp, s2d_rgb),
            sem=render_semantic(self.sem_mlp, a_rat_sem, f_sem),
            attention=AttentionRecord(fat=a_fat, rat=a_rat),
            point_sem=f_sem,
            ts=pontos.ts,
            point_valid=agregacao.point_valid,
        )


def render_rays(
    fields: RadianceSemanticFields,
    rays: RayBatch,
    ref_feats: FeatureGridSet,
    cameras: CameraStack,
    n_samples: int,
    stratified: bool = False,
    seed: Optional[int] = None,
    freeze_attention: bool = False,
    chunk: Optional[int] = None,
) -> RenderedRayBatch:
    """
    Pipeline completo: amostragem -> FAT -> campo semântico -> RAT -> cor e semântica.

    Com `chunk`, processa os raios em blocos e concatena (os raios são independentes).
    """
    if chunk is None or len(rays) <= chunk:
        return fields(rays, ref_feats, cameras, n_samples, stratified, seed, freeze_attention)

    partes = []
    for bloco, inicio in enumerate(range(0, len(rays), chunk)):
        indices = slice(inicio, inicio + chunk)
        semente = None if seed is None else seed + bloco
        partes.append(
            fields(rays.subset(indices), ref_feats, cameras, n_samples, stratified, semente, freeze_attention)
        )
    return RenderedRayBatch(
        color=torch.cat([p.color for p in partes]),
        sem=torch.cat([p.sem for p in partes]),
        attention=AttentionRecord(
            fat=torch.cat([p.attention.fat for p in partes]), rat=torch.cat([p.attention.rat for p in partes])
        ),
        point_sem=torch.cat([p.point_sem for p in partes]),
        ts=torch.cat([p.ts for p in partes]),
        point_valid=torch.cat([p.point_valid for p in partes]),
    )
