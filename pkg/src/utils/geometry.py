# /src/utils/geometry.py

"""
Geometria multivista em PyTorch: raios, amostragem ao longo do raio, projeção
pinhole nas vistas de referência, interpolação bilinear de mapas de
características e mapeamento profundidade -> índice de amostra.

Convenções:
    - Coordenadas de pixel são contínuas; o pixel inteiro (i, j) tem centro em (j + 0.5, i + 0.5).
    - Um mapa com passo (stride) s tem a célula j centrada na coordenada de imagem (j + 0.5) * s.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import torch
import torch.nn.functional as F

from src.models.camera import CameraModel
from src.utils.exceptions import GeometryError

logger = logging.getLogger(__name__)

EPS_PROFUNDIDADE = 1e-6


@dataclass
class RayBatch:
    """
    Lote de raios r(t) = o + t d.

    Attributes:
        origins (Tensor): R x 3.
        directions (Tensor): R x 3, norma unitária.
        pixels (Tensor): R x 2, coordenadas (u, v) de origem.
        t_near, t_far (float): Intervalo de amostragem.
    """

    origins: torch.Tensor
    directions: torch.Tensor
    pixels: torch.Tensor
    t_near: float
    t_far: float

    def __len__(self) -> int:
        return self.origins.shape[0]

    def subset(self, indices) -> "RayBatch":
        return RayBatch(
            self.origins[indices], self.directions[indices], self.pixels[indices], self.t_near, self.t_far
        )


@dataclass
class SampledPoints:
    """
    Pontos amostrados ao longo dos raios.

    Attributes:
        positions (Tensor): R x M x 3.
        ts (Tensor): R x M, estritamente crescente por raio.
        rel_dirs (Tensor | None): R x M x N x 3, direções relativas a cada vista de referência.
    """

    positions: torch.Tensor
    ts: torch.Tensor
    rel_dirs: Optional[torch.Tensor] = None

    @property
    def n_samples(self) -> int:
        return self.ts.shape[-1]


@dataclass
class CameraStack:
    """Câmeras empilhadas como tensores para projeção em lote."""

    intrinsics: torch.Tensor  # N x 4 (fx, fy, cx, cy)
    world_to_cam: torch.Tensor  # N x 4 x 4
    centers: torch.Tensor  # N x 3
    sizes: torch.Tensor  # N x 2 (largura, altura)

    def __len__(self) -> int:
        return self.intrinsics.shape[0]

    @classmethod
    def from_cameras(cls, cameras: Sequence[CameraModel], dtype=torch.float32, device=None) -> "CameraStack":
        def tensor(valores):
            return torch.as_tensor(valores, dtype=dtype, device=device)

        return cls(
            intrinsics=tensor([[c.fx, c.fy, c.cx, c.cy] for c in cameras]),
            world_to_cam=torch.stack([tensor(c.world_to_cam) for c in cameras]),
            centers=torch.stack([tensor(c.center) for c in cameras]),
            sizes=tensor([[c.width, c.height] for c in cameras]),
        )


def generate_rays(camera: CameraModel, pixels, t_near: float, t_far: float, dtype=torch.float32) -> RayBatch:
    """
    Raios pelas coordenadas contínuas de pixel fornecidas.

    Para passar pelo centro do pixel (i, j) use (j + 0.5, i + 0.5); ver `pixel_centers`.

    Raises:
        GeometryError: pixel fora dos limites da imagem.
    """
    uv = torch.as_tensor(pixels, dtype=torch.float64).reshape(-1, 2)
    if camera.width > 0 and camera.height > 0:
        fora = (uv[:, 0] < 0) | (uv[:, 0] > camera.width) | (uv[:, 1] < 0) | (uv[:, 1] > camera.height)
        if bool(fora.any()):
            primeiro = uv[fora][0].tolist()
            raise GeometryError(
                f"Pixel fora da imagem {camera.width}x{camera.height}: {primeiro}"
            )
    if not 0 < t_near < t_far:
        raise GeometryError(f"Intervalo inválido t_near={t_near}, t_far={t_far}")

    locais = torch.stack(
        [(uv[:, 0] - camera.cx) / camera.fx, (uv[:, 1] - camera.cy) / camera.fy, torch.ones(len(uv), dtype=torch.float64)],
        dim=-1,
    )
    rotacao = torch.as_tensor(camera.rotation, dtype=torch.float64)
    direcoes = locais @ rotacao.T
    direcoes = direcoes / direcoes.norm(dim=-1, keepdim=True)
    origens = torch.as_tensor(camera.center, dtype=torch.float64).expand_as(direcoes)
    return RayBatch(
        origins=origens.to(dtype).contiguous(),
        directions=direcoes.to(dtype),
        pixels=uv.to(dtype),
        t_near=float(t_near),
        t_far=float(t_far),
    )


def pixel_centers(altura: int, largura: int, passo: int = 1) -> torch.Tensor:
    """Centros (u, v) das células de uma grade com o passo dado, em ordem raster."""
    linhas = (torch.arange(altura // passo, dtype=torch.float64) + 0.5) * passo
    colunas = (torch.arange(largura // passo, dtype=torch.float64) + 0.5) * passo
    v, u = torch.meshgrid(linhas, colunas, indexing="ij")
    return torch.stack([u.reshape(-1), v.reshape(-1)], dim=-1)


def sample_points(rays: RayBatch, M: int, stratified: bool = False, seed: Optional[int] = None) -> SampledPoints:
    """
    M amostras por raio em [t_near, t_far].

    Sem estratificação usa os pontos médios dos M intervalos; com estratificação
    sorteia uma posição uniforme dentro de cada intervalo usando `seed`.
    """
    if M < 1:
        raise GeometryError("M deve ser >= 1")
    dtype = rays.origins.dtype
    device = rays.origins.device
    largura = (rays.t_far - rays.t_near) / M
    inicio = rays.t_near + largura * torch.arange(M, dtype=dtype, device=device)
    if stratified:
        gerador = torch.Generator(device="cpu")
        gerador.manual_seed(0 if seed is None else int(seed))
        deslocamento = torch.rand((len(rays), M), generator=gerador, dtype=dtype).to(device)
        # mantém a amostra estritamente dentro do intervalo
        deslocamento = deslocamento.clamp(1e-6, 1.0 - 1e-6)
    else:
        deslocamento = torch.full((len(rays), M), 0.5, dtype=dtype, device=device)
    ts = inicio.unsqueeze(0) + largura * deslocamento
    posicoes = rays.origins.unsqueeze(1) + ts.unsqueeze(-1) * rays.directions.unsqueeze(1)
    return SampledPoints(positions=posicoes, ts=ts)


def relative_directions(pontos: torch.Tensor, direcoes_alvo: torch.Tensor, cameras: CameraStack) -> torch.Tensor:
    """
    Δd: diferença entre a direção de visada de cada vista de referência para o
    ponto e a direção do raio alvo.

    Args:
        pontos: R x M x 3.
        direcoes_alvo: R x 3.
    Returns:
        R x M x N x 3
    """
    para_ponto = pontos.unsqueeze(2) - cameras.centers.to(pontos.dtype).view(1, 1, -1, 3)
    para_ponto = para_ponto / para_ponto.norm(dim=-1, keepdim=True).clamp_min(1e-12)
    return para_ponto - direcoes_alvo.view(-1, 1, 1, 3)


def project(x: torch.Tensor, camera):
    """
    Projeção pinhole de pontos do mundo.

    Args:
        x: ... x 3 pontos do mundo.
        camera: CameraModel (uma vista) ou CameraStack (N vistas).
    Returns:
        uv (... x 2 ou N x ... x 2), profundidade na câmera (z), máscara de validade (z > eps).
    """
    if isinstance(camera, CameraModel):
        pilha = CameraStack.from_cameras([camera], dtype=x.dtype, device=x.device)
        uv, z, valido = project(x, pilha)
        return uv[0], z[0], valido[0]

    formato = x.shape[:-1]
    planos = x.reshape(-1, 3)
    w2c = camera.world_to_cam.to(x.dtype)
    locais = torch.einsum("nij,pj->npi", w2c[:, :3, :3], planos) + w2c[:, None, :3, 3]
    z = locais[..., 2]
    valido = z > EPS_PROFUNDIDADE
    z_seguro = torch.where(valido, z, torch.ones_like(z))
    intr = camera.intrinsics.to(x.dtype)
    u = intr[:, 0:1] * locais[..., 0] / z_seguro + intr[:, 2:3]
    v = intr[:, 1:2] * locais[..., 1] / z_seguro + intr[:, 3:4]
    uv = torch.stack([u, v], dim=-1)
    n = len(camera)
    return uv.reshape(n, *formato, 2), z.reshape(n, *formato), valido.reshape(n, *formato)


def unproject(camera: CameraModel, uv: torch.Tensor, profundidade_ao_longo_raio: torch.Tensor) -> torch.Tensor:
    """Inverso de `project` usando profundidade medida ao longo do raio."""
    raios = generate_rays(camera, uv, t_near=1e-6, t_far=1.0, dtype=uv.dtype)
    return raios.origins + profundidade_ao_longo_raio.unsqueeze(-1) * raios.directions


def bilinear_sample(grid: torch.Tensor, uv: torch.Tensor, passo: float = 1.0):
    """
    Interpolação bilinear de mapas de características.

    Args:
        grid: C x H' x W' (um mapa) ou N x C x H' x W' (N mapas).
        uv: ... x 2 (um mapa) ou N x ... x 2, em coordenadas de pixel da imagem.
        passo: fator de escala imagem -> mapa (stride).
    Returns:
        características (... x C ou N x ... x C) e máscara de validade. Coordenadas
        fora da extensão do mapa retornam vetor zero e máscara falsa.
    """
    unico = grid.dim() == 3
    if unico:
        grid = grid.unsqueeze(0)
        uv = uv.unsqueeze(0)
    n, canais, altura, largura = grid.shape
    formato = uv.shape[1:-1]
    plano = uv.reshape(n, 1, -1, 2).to(grid.dtype)
    # align_corners=False: -1 e +1 são as bordas externas das células extremas
    normalizado = torch.stack(
        [2.0 * plano[..., 0] / (passo * largura) - 1.0, 2.0 * plano[..., 1] / (passo * altura) - 1.0],
        dim=-1,
    )
    valido = (normalizado.abs() <= 1.0).all(dim=-1)
    amostras = F.grid_sample(grid, normalizado, mode="bilinear", padding_mode="border", align_corners=False)
    amostras = amostras[:, :, 0, :].permute(0, 2, 1) * valido[:, 0, :, None].to(grid.dtype)
    amostras = amostras.reshape(n, *formato, canais)
    valido = valido.reshape(n, *formato)
    if unico:
        return amostras[0], valido[0]
    return amostras, valido


@dataclass
class DepthIndexResult:
    """Índices x_d por raio e contagem de profundidades fora de [t_near, t_far]."""

    indices: torch.Tensor
    n_clamped: int


def depth_to_sample_index(ts: torch.Tensor, gt_depth: torch.Tensor, t_near: float, t_far: float) -> DepthIndexResult:
    """
    argmin_i |t_i - gt_depth| por raio, com desempate para o menor índice.

    Profundidades fora de [t_near, t_far] são presas à extremidade mais
    próxima e contadas (com aviso no log).
    """
    gt = gt_depth.to(ts.dtype)
    fora = (gt < t_near) | (gt > t_far)
    n_fora = int(fora.sum())
    if n_fora:
        logger.warning(f"{n_fora} profundidade(s) fora de [{t_near}, {t_far}] presas ao limite")
    gt = gt.clamp(t_near, t_far)
    distancia = (ts - gt.unsqueeze(-1)).abs()
    minima = distancia.min(dim=-1, keepdim=True).values
    tolerancia = 1e-9 * max(1.0, abs(t_far))
    empatados = distancia <= minima + tolerancia
    indices = empatados.to(torch.int64).argmax(dim=-1)
    return DepthIndexResult(indices=indices, n_clamped=n_fora)
