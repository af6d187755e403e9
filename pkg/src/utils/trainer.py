# /src/utils/trainer.py

"""
Laço de otimização ponta a ponta.

Cada passo:
    1. sorteia uma cena e uma vista alvo de treino;
    2. escolhe as N_ref vistas de treino mais próximas (centro da câmera), sem a alvo;
    3. sorteia `rays_per_step` células da grade de passo 4 da alvo (sem reposição);
    4. renderiza, monta o mapa fundido com o professor e calcula as perdas;
    5. um passo de Adam com 3 grupos (extrator, transformers, cabeça) a lr0 * gamma^passo.

Com o bloqueio de gradiente ligado, L_SD e L_DG são calculadas numa segunda
passada sobre características bloqueadas: os transformers recebem gradiente,
o extrator não.
"""

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch

from src.models.backbone import PASSO_BASE, block_gradient, extract_features, teacher_features
from src.models.fields import render_rays
from src.models.gpnerf import GPNeRF, build_model
from src.models.perception_head import decode, fuse_maps, pixel_weights, split_features
from src.utils.checkpoint import load_checkpoint, restore_model, save_checkpoint
from src.utils.dataset_io import Dataset, SceneDataset
from src.utils.exceptions import ConfigError, DatasetError, TrainingDivergedError
from src.utils.geometry import CameraStack, RayBatch, generate_rays
from src.utils.losses import (
    COLUNAS_LOG,
    LossReport,
    LossWeights,
    build_report,
    depth_guided_distill_loss,
    photometric_loss,
    semantic_ce_loss,
    semantic_distill_loss,
    total_loss,
)
from src.utils.performance import StepTimer, measure_performance, memory_usage_mb
from src.utils.scene_oracle import camera_rays_numpy, intersect_scene, shade

logger = logging.getLogger(__name__)

ARQUIVO_CHECKPOINT = "checkpoint.zip"
ARQUIVO_LOG = "train_log.csv"
GRUPOS = ("extractor", "transformer", "head")


@dataclass
class TrainConfig:
    """Parâmetros do laço de treino (subconjunto do RunConfig)."""

    mode: str = "generalization"
    steps: int = 200_000
    rays_per_step: int = 512
    samples_per_ray: int = 64
    n_ref_views: int = 10
    lr_extractor: float = 5e-3
    lr_transformer: float = 1e-5
    lr_head: float = 5e-5
    lr_decay: float = 0.999995
    betas: Sequence[float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    stratified: bool = True
    instance_mode: bool = False
    weights: LossWeights = field(default_factory=LossWeights)
    n_p: int = 2
    rendered_pixel_weight: float = 2.0
    sem_loss_rendered_only: bool = False
    use_semantic_distill: bool = True
    use_depth_guided: bool = True
    use_gradient_block: bool = True
    freeze_shared_attention: bool = False
    checkpoint_every: int = 1000
    log_every: int = 50

    def __post_init__(self):
        if min(self.lr_extractor, self.lr_transformer, self.lr_head) <= 0:
            raise ConfigError("taxas de aprendizado devem ser positivas")
        if self.steps < 1 or self.rays_per_step < 1:
            raise ConfigError("steps e rays_per_step devem ser >= 1")
        if self.instance_mode and self.mode != "finetune":
            raise ConfigError("instance_mode só é permitido em finetune")
        self.weights.validate()

    @classmethod
    def from_run_config(cls, config) -> "TrainConfig":
        return cls(
            mode=config.mode,
            steps=config.steps,
            rays_per_step=config.rays_per_step,
            samples_per_ray=config.samples_per_ray,
            n_ref_views=config.n_ref_views,
            lr_extractor=config.lr_extractor,
            lr_transformer=config.lr_transformer,
            lr_head=config.lr_head,
            lr_decay=config.lr_decay,
            betas=(config.adam_beta1, config.adam_beta2),
            eps=config.adam_eps,
            seed=config.seed,
            stratified=config.stratified,
            instance_mode=config.instance_mode,
            weights=config.loss_weights(),
            n_p=config.n_p,
            rendered_pixel_weight=config.rendered_pixel_weight,
            sem_loss_rendered_only=config.sem_loss_rendered_only,
            use_semantic_distill=config.use_semantic_distill,
            use_depth_guided=config.use_depth_guided,
            use_gradient_block=config.use_gradient_block,
            freeze_shared_attention=config.freeze_shared_attention,
            checkpoint_every=config.checkpoint_every,
            log_every=config.log_every,
        )

    def base_lrs(self) -> Dict[str, float]:
        return {"extractor": self.lr_extractor, "transformer": self.lr_transformer, "head": self.lr_head}

    def lr_at(self, grupo: str, passo: int) -> float:
        """lr(passo) = lr0 * gamma^passo."""
        return self.base_lrs()[grupo] * self.lr_decay ** passo


@dataclass
class TrainResult:
    model: GPNeRF
    step: int
    reports: List[LossReport]
    checkpoint_path: Optional[Path] = None
    log_path: Optional[Path] = None


@dataclass
class StepBatch:
    """Tudo o que um passo precisa, já em tensores."""

    ref_images: torch.Tensor  # N x 3 x H x W
    ref_cameras: CameraStack
    target_image: torch.Tensor  # 3 x H x W
    rays: RayBatch
    cells: torch.Tensor  # R x 2 (linha, coluna)
    gt_color: torch.Tensor  # R x 3
    gt_depth: torch.Tensor  # R
    labels: torch.Tensor  # H x W
    t_near: float
    t_far: float


# ========== SELEÇÃO ==========

def select_reference_views(cameras, alvo: int, candidatas: Sequence[int], n_ref: int) -> List[int]:
    """
    As `n_ref` candidatas mais próximas da alvo pelo centro da câmera
    (desempate pelo menor índice); a alvo nunca é incluída.

    Raises:
        DatasetError: candidatas insuficientes.
    """
    outras = [int(i) for i in candidatas if int(i) != alvo]
    if len(outras) < n_ref:
        raise DatasetError(f"Vistas insuficientes: {len(outras)} candidatas para N_ref={n_ref}")
    centro = np.asarray(cameras[alvo].center)
    distancias = [(float(np.linalg.norm(np.asarray(cameras[i].center) - centro)), i) for i in outras]
    return [i for _, i in sorted(distancias)[:n_ref]]


def sample_ray_cells(altura_f: int, largura_f: int, n: int, rng: np.random.Generator) -> torch.Tensor:
    """min(n, H_f * W_f) células distintas da grade, como (linha, coluna)."""
    total = altura_f * largura_f
    escolhidas = rng.choice(total, size=min(n, total), replace=False)
    return torch.as_tensor(np.stack([escolhidas // largura_f, escolhidas % largura_f], axis=-1), dtype=torch.int64)


def cell_centers(cells: torch.Tensor, passo: int = PASSO_BASE) -> torch.Tensor:
    """Centro (u, v) em pixels da imagem de cada célula (linha, coluna)."""
    return torch.stack([(cells[:, 1].double() + 0.5) * passo, (cells[:, 0].double() + 0.5) * passo], dim=-1)


def ray_ground_truth(cena: SceneDataset, camera, centros: torch.Tensor, dtype=torch.float32):
    """
    Cor sombreada e profundidade exatas do raio que passa por cada centro.

    O centro de uma célula de passo 4 cai na quina entre quatro pixels, então
    amostrar os mapas renderizados misturaria superfícies nas bordas das caixas.

    Returns:
        (cor R x 3, profundidade R) ao longo do raio
    """
    origens, direcoes = camera_rays_numpy(camera, centros.detach().cpu().numpy())
    t, normal, _, _, cor_base = intersect_scene(cena.scene, origens, direcoes)
    cor = shade(cor_base, normal)
    return torch.as_tensor(cor, dtype=dtype), torch.as_tensor(t, dtype=dtype)


def _imagem_tensor(vista, dtype) -> torch.Tensor:
    return torch.as_tensor(np.asarray(vista.rgb), dtype=dtype).permute(2, 0, 1).contiguous()


def prepare_step(cena: SceneDataset, alvo: int, referencias: Sequence[int], cells: torch.Tensor, instance_mode: bool, dtype=torch.float32) -> StepBatch:
    """Monta raios, verdade de campo amostrada e vistas de referência de um passo."""
    vista = cena.view(alvo)
    centros = cell_centers(cells)
    raios = generate_rays(vista.camera, centros, cena.t_near, cena.t_far, dtype=dtype)
    imagem = _imagem_tensor(vista, dtype)
    cor, prof_raios = ray_ground_truth(cena, vista.camera, centros, dtype)
    rotulos = vista.instance if instance_mode else vista.semantic
    return StepBatch(
        ref_images=torch.stack([_imagem_tensor(cena.view(i), dtype) for i in referencias]),
        ref_cameras=CameraStack.from_cameras([cena.view(i).camera for i in referencias], dtype=dtype),
        target_image=imagem,
        rays=raios,
        cells=cells,
        gt_color=cor,
        gt_depth=prof_raios,
        labels=torch.as_tensor(np.asarray(rotulos), dtype=torch.int64),
        t_near=cena.t_near,
        t_far=cena.t_far,
    )


# ========== PERDAS DE UM PASSO ==========

def compute_step_losses(modelo: GPNeRF, lote: StepBatch, config: TrainConfig, semente: int):
    """
    Passada direta completa de um passo.

    Returns:
        (termos: dict nome -> tensor, counts: dict)
    """
    counts: Dict[str, int] = {}
    altura, largura = lote.target_image.shape[-2:]
    feats = extract_features(modelo.extractor, lote.ref_images)
    professor = teacher_features(modelo.extractor, lote.target_image)
    argumentos = dict(
        n_samples=config.samples_per_ray,
        stratified=config.stratified,
        seed=semente,
        freeze_attention=config.freeze_shared_attention,
    )
    saida = render_rays(modelo.fields, lote.rays, feats, lote.ref_cameras, **argumentos)

    termos = {"rgb": photometric_loss(saida.color, lote.gt_color)}

    fundido = fuse_maps(saida.sem, lote.cells, professor)
    logits = decode(modelo.head, split_features(fundido), (altura, largura))
    pesos = pixel_weights(fundido, (altura, largura), config.rendered_pixel_weight, config.sem_loss_rendered_only)
    termos["sem"] = semantic_ce_loss(logits, lote.labels, pesos)

    if config.use_semantic_distill or config.use_depth_guided:
        if config.use_gradient_block:
            # segunda passada obrigatória: reaproveitar `saida` levaria L_SD e L_DG ao extrator
            saida_dest = render_rays(modelo.fields, lote.rays, block_gradient(feats), lote.ref_cameras, **argumentos)
        else:
            saida_dest = saida
        prof_raios = professor.features[:, lote.cells[:, 0], lote.cells[:, 1]].T
        if config.use_semantic_distill:
            termos["sd"] = semantic_distill_loss(saida_dest.sem, prof_raios, counts)
        if config.use_depth_guided:
            termos["dg"] = depth_guided_distill_loss(
                saida_dest.point_sem, saida_dest.ts, lote.gt_depth, prof_raios,
                lote.t_near, lote.t_far, config.n_p, counts,
            )
    return termos, counts


# ========== TREINADOR ==========

def build_optimizer(modelo: GPNeRF, config: TrainConfig) -> torch.optim.Adam:
    grupos = modelo.parameter_groups()
    lrs = config.base_lrs()
    return torch.optim.Adam(
        [{"params": grupos[nome], "lr": lrs[nome], "name": nome} for nome in GRUPOS],
        betas=tuple(config.betas),
        eps=config.eps,
    )


class Trainer:
    """Laço de treino com log CSV, checkpoints periódicos e retomada."""

    def __init__(
        self,
        modelo: GPNeRF,
        dataset: Dataset,
        config: TrainConfig,
        output_dir=None,
        run_config: Optional[Dict] = None,
        start_step: int = 0,
        optimizer_state: Optional[Dict] = None,
        meta: Optional[Dict] = None,
    ):
        if not dataset.scenes:
            raise DatasetError("Dataset vazio")
        self.modelo = modelo
        self.dataset = dataset
        self.config = config
        self.output_dir = Path(output_dir) if output_dir else None
        self.run_config = run_config or {}
        self.step = int(start_step)
        self.meta = dict(meta or {})
        self.meta.setdefault("n_classes", modelo.n_classes)
        self.reports: List[LossReport] = []
        self.optimizer = build_optimizer(modelo, config)
        if optimizer_state is not None:
            self.optimizer.load_state_dict(optimizer_state)
        self._dtype = next(modelo.parameters()).dtype
        for cena in dataset.scenes:
            if len(cena.train_views) < config.n_ref_views + 1:
                raise DatasetError(
                    f"Cena {cena.name}: {len(cena.train_views)} vistas de treino, são necessárias N_ref + 1 = {config.n_ref_views + 1}"
                )

    @property
    def checkpoint_path(self) -> Optional[Path]:
        return self.output_dir / ARQUIVO_CHECKPOINT if self.output_dir else None

    @property
    def log_path(self) -> Optional[Path]:
        return self.output_dir / ARQUIVO_LOG if self.output_dir else None

    def _aplicar_lr(self, passo: int):
        for grupo in self.optimizer.param_groups:
            grupo["lr"] = self.config.lr_at(grupo["name"], passo)

    def current_lrs(self) -> Dict[str, float]:
        return {grupo["name"]: grupo["lr"] for grupo in self.optimizer.param_groups}

    def _escrever_log(self, linha: Dict[str, object]):
        if self.log_path is None:
            return
        novo = not self.log_path.exists() or linha["step"] == 0
        self.log_path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.log_path, "w" if novo else "a", newline="", encoding="utf-8") as f:
            escritor = csv.DictWriter(f, fieldnames=COLUNAS_LOG)
            if novo:
                escritor.writeheader()
            escritor.writerow(linha)

    def _despejar_divergencia(self, relatorio: LossReport):
        if self.output_dir is None:
            return
        self.output_dir.mkdir(parents=True, exist_ok=True)
        with open(self.output_dir / "diverged_report.json", "w", encoding="utf-8") as f:
            json.dump({"step": self.step, **relatorio.as_dict()}, f, indent=2)

    def train_step(self) -> LossReport:
        passo = self.step
        rng = np.random.default_rng([self.config.seed, passo])
        cena = self.dataset.scenes[int(rng.integers(len(self.dataset.scenes)))]
        alvo = int(cena.train_views[int(rng.integers(len(cena.train_views)))])
        cameras = [v.camera for v in cena.views]
        referencias = select_reference_views(cameras, alvo, cena.train_views, self.config.n_ref_views)
        altura, largura = cena.image_size
        cells = sample_ray_cells(altura // PASSO_BASE, largura // PASSO_BASE, self.config.rays_per_step, rng)
        lote = prepare_step(cena, alvo, referencias, cells, self.config.instance_mode, self._dtype)

        self._aplicar_lr(passo)
        self.modelo.train()
        self.optimizer.zero_grad(set_to_none=True)
        termos, counts = compute_step_losses(self.modelo, lote, self.config, semente=int(rng.integers(2**31)))
        total = total_loss(termos, self.config.weights)
        relatorio = build_report(termos, self.config.weights, n_rays=len(cells), counts=counts)
        if not torch.isfinite(total) or not relatorio.is_finite():
            self._despejar_divergencia(relatorio)
            raise TrainingDivergedError(f"Perda não finita no passo {passo}", relatorio.as_dict())

        total.backward()
        self.optimizer.step()
        self.step += 1
        self.reports.append(relatorio)
        self._escrever_log(relatorio.log_row(passo, self.config.lr_at("extractor", passo)))
        return relatorio

    def save(self) -> Optional[Path]:
        if self.checkpoint_path is None:
            return None
        return save_checkpoint(
            self.checkpoint_path, self.modelo, self.optimizer, self.step, self.run_config, self.meta
        )

    @measure_performance(limite=60.0)
    def run(self, ate_passo: int) -> TrainResult:
        """Treina até o passo global `ate_passo` (exclusivo)."""
        cronometro = StepTimer()
        inicio = self.step
        while self.step < ate_passo:
            relatorio = self.train_step()
            cronometro.tick()
            if self.step % self.config.log_every == 0 or self.step == ate_passo:
                logger.info(
                    f"Passo {self.step}/{ate_passo}: L_all={relatorio.total:.4f} "
                    f"(rgb={relatorio.rgb:.4f}, sem={relatorio.sem:.4f}, sd={relatorio.sd:.4f}, dg={relatorio.dg:.4f}) "
                    f"{cronometro.reset():.2f}s/passo, memória {memory_usage_mb():.0f} MB"
                )
            if self.config.checkpoint_every and self.step % self.config.checkpoint_every == 0:
                self.save()
        caminho = self.save()
        logger.info(f"Treino concluído: passos {inicio} -> {self.step}")
        return TrainResult(
            model=self.modelo, step=self.step, reports=self.reports,
            checkpoint_path=caminho, log_path=self.log_path,
        )


def _preparar_determinismo(semente: int):
    torch.manual_seed(semente)
    torch.use_deterministic_algorithms(True, warn_only=True)


def train(dataset: Dataset, run_config, output_dir=None, resume=None, modelo: Optional[GPNeRF] = None) -> TrainResult:
    """
    Treino de generalização sobre todas as cenas do dataset.

    Args:
        resume: caminho de checkpoint para retomar (continua até `steps` no total).
    """
    config = TrainConfig.from_run_config(run_config)
    _preparar_determinismo(config.seed)
    passo_inicial = 0
    estado_otimizador = None
    if resume is not None:
        checkpoint = load_checkpoint(resume)
        modelo, _ = restore_model(checkpoint)
        passo_inicial = checkpoint.step
        estado_otimizador = checkpoint.optimizer_state
        logger.info(f"Retomando de {resume} no passo {passo_inicial}")
    elif modelo is None:
        modelo = build_model(run_config)

    treinador = Trainer(
        modelo, dataset, config, output_dir, run_config.to_dict(), passo_inicial, estado_otimizador,
    )
    return treinador.run(config.steps)


def finetune(checkpoint_path, cena: SceneDataset, run_config, output_dir=None) -> TrainResult:
    """
    Ajuste por cena a partir de um checkpoint: `steps` passos adicionais, com o
    contador de passos continuando o do checkpoint. No modo instância a cabeça
    passa a ter K+1 saídas (K instâncias da cena).
    """
    config = TrainConfig.from_run_config(run_config.replace(mode="finetune"))
    _preparar_determinismo(config.seed)
    checkpoint = load_checkpoint(checkpoint_path)
    modelo, _ = restore_model(checkpoint)
    meta = {"scene": cena.name, "instance_mode": config.instance_mode, "finetuned_from": str(checkpoint_path)}
    if config.instance_mode:
        modelo.reset_head(cena.n_instances + 1)
    meta["n_classes"] = modelo.n_classes

    dataset = Dataset(scenes=[cena], config={})
    treinador = Trainer(
        modelo, dataset, config, output_dir, run_config.replace(mode="finetune").to_dict(), checkpoint.step, None, meta,
    )
    return treinador.run(checkpoint.step + config.steps)
