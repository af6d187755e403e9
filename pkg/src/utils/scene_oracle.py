# /src/utils/scene_oracle.py

"""
Oráculo de cenas sintéticas.

Gera salas com caixas alinhadas aos eixos e renderiza, de forma analítica,
RGB, profundidade, semântica e instância para qualquer câmera dentro da sala.
Tudo aqui é função pura de (config, semente, câmera).
"""

import logging
from typing import List, Tuple

import numpy as np

from src.models.camera import CameraModel
from src.models.scene import BACKGROUND_CLASS, Box, Scene, SceneConfig, ViewRecord
from src.utils.exceptions import SceneGenerationError

logger = logging.getLogger(__name__)

# Direção (normalizada) para a luz e termo ambiente do sombreamento Lambertiano
LUZ = np.array([0.35, -0.45, 0.82]) / np.linalg.norm([0.35, -0.45, 0.82])
AMBIENTE = 0.35

# Região central (fração do menor lado da sala) onde as caixas podem ficar
FRACAO_REGIAO_OBJETOS = 0.25
# Raio do anel de câmeras (fração do menor lado horizontal)
FRACAO_RAIO_ANEL = 0.40
MAX_TENTATIVAS = 200
FOLGA_PISO = 1e-2


def _sobrepoe(a: Box, b: Box, margem: float = 0.05) -> bool:
    for eixo in range(3):
        if a.max_corner[eixo] + margem <= b.min_corner[eixo]:
            return False
        if b.max_corner[eixo] + margem <= a.min_corner[eixo]:
            return False
    return True


def generate_scene(config: SceneConfig) -> Scene:
    """
    Gera uma cena determinística a partir de (config, seed).

    As caixas ficam apoiadas (com uma folga mínima) sobre o piso, dentro da
    região central da sala, sem sobreposição. Os ids de instância são 1..n.

    Raises:
        SceneGenerationError: se algum objeto não couber após MAX_TENTATIVAS.
    """
    rng = np.random.default_rng(config.seed)
    extensao = np.asarray(config.room_extent, dtype=np.float64)
    minimo_sala = -extensao / 2.0
    meia_regiao = FRACAO_REGIAO_OBJETOS * min(extensao[0], extensao[1])
    classes = [cid for cid, _ in config.class_palette if cid != BACKGROUND_CLASS]

    if config.n_objects > 0 and not classes:
        raise SceneGenerationError("Paleta sem classes de objeto para posicionar caixas")

    caixas: List[Box] = []
    for instancia in range(1, config.n_objects + 1):
        for _ in range(MAX_TENTATIVAS):
            tamanho = rng.uniform(
                [0.3, 0.3, 0.3],
                [min(1.2, meia_regiao), min(1.2, meia_regiao), min(1.5, 0.6 * extensao[2])],
            )
            centro_xy = rng.uniform(-meia_regiao + tamanho[:2] / 2, meia_regiao - tamanho[:2] / 2)
            minimo = np.array([
                centro_xy[0] - tamanho[0] / 2,
                centro_xy[1] - tamanho[1] / 2,
                minimo_sala[2] + FOLGA_PISO,
            ])
            maximo = minimo + tamanho
            classe = int(classes[rng.integers(len(classes))])
            candidata = Box(
                min_corner=tuple(float(v) for v in minimo),
                max_corner=tuple(float(v) for v in maximo),
                class_id=classe,
                instance_id=instancia,
                base_color=config.color_of(classe),
            )
            if not np.all(minimo > minimo_sala) or not np.all(maximo < -minimo_sala):
                continue
            if any(_sobrepoe(candidata, outra) for outra in caixas):
                continue
            caixas.append(candidata)
            break
        else:
            raise SceneGenerationError(
                f"Não foi possível posicionar o objeto {instancia} de {config.n_objects} "
                f"após {MAX_TENTATIVAS} tentativas (sala {tuple(extensao)})"
            )

    logger.debug(f"Cena gerada com {len(caixas)} caixas (seed={config.seed})")
    return Scene(config=config, boxes=tuple(caixas))


def default_intrinsics(config: SceneConfig) -> Tuple[float, float, float, float]:
    """fx, fy, cx, cy para o campo de visão horizontal configurado."""
    altura, largura = config.image_size
    foco = largura / (2.0 * np.tan(np.deg2rad(config.fov_degrees) / 2.0))
    return foco, foco, largura / 2.0, altura / 2.0


def pixel_rays(camera: CameraModel, altura: int, largura: int) -> Tuple[np.ndarray, np.ndarray]:
    """Origens e direções unitárias (H*W x 3) passando pelos centros dos pixels."""
    colunas, linhas = np.meshgrid(np.arange(largura) + 0.5, np.arange(altura) + 0.5)
    return camera_rays_numpy(camera, np.stack([colunas.ravel(), linhas.ravel()], axis=-1))


def camera_rays_numpy(camera: CameraModel, uv: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Versão NumPy da geração de raios usada pelo oráculo."""
    uv = np.asarray(uv, dtype=np.float64)
    locais = np.stack(
        [(uv[:, 0] - camera.cx) / camera.fx, (uv[:, 1] - camera.cy) / camera.fy, np.ones(len(uv))],
        axis=-1,
    )
    direcoes = locais @ camera.rotation.T
    direcoes /= np.linalg.norm(direcoes, axis=-1, keepdims=True)
    origens = np.broadcast_to(camera.center, direcoes.shape).copy()
    return origens, direcoes


def intersect_scene(scene: Scene, origens: np.ndarray, direcoes: np.ndarray):
    """
    Interseção analítica mais próxima de cada raio com a cena.

    Returns:
        t (P,), normal (P, 3), classe (P,), instancia (P,), cor_base (P, 3)
    """
    n_raios = len(origens)
    seguro = np.where(np.abs(direcoes) < 1e-12, 1e-12, direcoes)

    # Saída da sala (por dentro): para cada eixo, o plano à frente do raio.
    limites = np.where(seguro > 0, scene.room_max, scene.room_min)
    t_planos = (limites - origens) / seguro
    eixo_saida = np.argmin(t_planos, axis=-1)
    t = t_planos[np.arange(n_raios), eixo_saida]
    normal = np.zeros((n_raios, 3))
    normal[np.arange(n_raios), eixo_saida] = -np.sign(seguro[np.arange(n_raios), eixo_saida])
    classe = np.full(n_raios, BACKGROUND_CLASS, dtype=np.int64)
    instancia = np.zeros(n_raios, dtype=np.int64)
    cor_fundo = np.asarray(scene.config.color_of(BACKGROUND_CLASS))
    cor = np.broadcast_to(cor_fundo, (n_raios, 3)).copy()

    # Caixas pelo método das placas (slab method).
    for caixa in scene.boxes:
        minimo = np.asarray(caixa.min_corner)
        maximo = np.asarray(caixa.max_corner)
        t1 = (minimo - origens) / seguro
        t2 = (maximo - origens) / seguro
        t_entrada_eixos = np.minimum(t1, t2)
        t_entrada = t_entrada_eixos.max(axis=-1)
        t_saida = np.maximum(t1, t2).min(axis=-1)
        acerta = (t_entrada <= t_saida) & (t_entrada > 1e-9) & (t_entrada < t)
        if not np.any(acerta):
            continue
        eixo = np.argmax(t_entrada_eixos, axis=-1)
        t = np.where(acerta, t_entrada, t)
        normal_caixa = np.zeros((n_raios, 3))
        normal_caixa[np.arange(n_raios), eixo] = -np.sign(seguro[np.arange(n_raios), eixo])
        normal = np.where(acerta[:, None], normal_caixa, normal)
        classe = np.where(acerta, caixa.class_id, classe)
        instancia = np.where(acerta, caixa.instance_id, instancia)
        cor = np.where(acerta[:, None], np.asarray(caixa.base_color), cor)

    return t, normal, classe, instancia, cor


def shade(cor_base: np.ndarray, normal: np.ndarray) -> np.ndarray:
    """Sombreamento Lambertiano com luz direcional fixa."""
    lambert = np.clip(normal @ LUZ, 0.0, None)
    return np.clip(cor_base * (AMBIENTE + (1.0 - AMBIENTE) * lambert)[:, None], 0.0, 1.0)


def render_view_oracle(scene: Scene, camera: CameraModel) -> ViewRecord:
    """
    Renderiza a verdade de campo analítica de uma câmera.

    A profundidade é a distância ao longo do raio (direções unitárias) até a
    interseção mais próxima; as paredes garantem que todo raio acerta algo.
    """
    altura, largura = scene.config.image_size
    origens, direcoes = pixel_rays(camera, altura, largura)
    t, normal, classe, instancia, cor = intersect_scene(scene, origens, direcoes)
    rgb = shade(cor, normal)
    return ViewRecord(
        rgb=rgb.reshape(altura, largura, 3),
        depth=t.reshape(altura, largura),
        semantic=classe.reshape(altura, largura),
        instance=instancia.reshape(altura, largura),
        camera=camera,
    )


def sample_camera_ring(scene: Scene, n_views: int, seed: int, jitter: float = 0.05) -> List[CameraModel]:
    """
    Câmeras num anel horizontal dentro da sala, todas olhando para o centroide
    das caixas, com perturbação pequena e determinística da posição.
    """
    if n_views < 1:
        raise SceneGenerationError("n_views deve ser >= 1")
    rng = np.random.default_rng(seed)
    extensao = np.asarray(scene.config.room_extent, dtype=np.float64)
    raio = FRACAO_RAIO_ANEL * min(extensao[0], extensao[1])
    altura_base = min(0.2 * extensao[2], extensao[2] / 2.0 - 0.1)
    alvo = scene.centroid
    fx, fy, cx, cy = default_intrinsics(scene.config)
    altura_img, largura_img = scene.config.image_size

    cameras = []
    for k in range(n_views):
        angulo = 2.0 * np.pi * k / n_views + rng.uniform(-jitter, jitter)
        r = raio * (1.0 + rng.uniform(-jitter, jitter))
        z = altura_base + rng.uniform(-jitter, jitter) * extensao[2]
        posicao = np.array([r * np.cos(angulo), r * np.sin(angulo), z])
        posicao = np.clip(posicao, scene.room_min + 0.05, scene.room_max - 0.05)
        cameras.append(
            CameraModel.look_at(posicao, alvo, fx, fy, cx, cy, width=largura_img, height=altura_img)
        )
    return cameras


def split_views(n_views: int, n_test: int, seed: int) -> Tuple[List[int], List[int]]:
    """Divisão reprodutível treino/teste dos índices de vista."""
    ordem = np.random.default_rng(seed + 7919).permutation(n_views)
    teste = sorted(int(i) for i in ordem[n_views - n_test:]) if n_test > 0 else []
    treino = sorted(int(i) for i in ordem[: n_views - n_test])
    return treino, teste
