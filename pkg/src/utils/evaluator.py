# /src/utils/evaluator.py

"""
Métricas e exportações de diagnóstico.

- PSNR (dB) e SSIM em luminância (janela gaussiana 11x11, sigma 1.5).
- mIoU, acurácia total e média por matriz de confusão (classes presentes na verdade).
- AP75 simplificado: máscaras por componentes conexas dos mapas de rótulo,
  casamento guloso por IoU decrescente, TP se IoU >= 0.75, AP = TP / (TP + FP)
  por vista e média entre vistas.
- Exportação PCA das características renderizadas, mapa de erro e rótulos coloridos.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from PIL import Image
from scipy import ndimage, signal

from src.utils.exceptions import ShapeMismatchError
from src.utils.validators import validate_same_shape

logger = logging.getLogger(__name__)

PESOS_LUMINANCIA = np.array([0.299, 0.587, 0.114])
JANELA_SSIM = 11
SIGMA_SSIM = 1.5
K1, K2 = 0.01, 0.03
LIMIAR_AP = 0.75


def _numpy(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        return x.detach().cpu().double().numpy() if x.is_floating_point() else x.detach().cpu().numpy()
    return np.asarray(x)


# ========== FOTOMÉTRICAS ==========

def psnr(pred, gt) -> float:
    """10 log10(1 / MSE); MSE = 0 devolve +inf."""
    pred, gt = _numpy(pred).astype(np.float64), _numpy(gt).astype(np.float64)
    validate_same_shape(pred, gt, "psnr")
    mse = float(np.mean((pred - gt) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def to_luminance(imagem: np.ndarray) -> np.ndarray:
    imagem = np.asarray(imagem, dtype=np.float64)
    if imagem.ndim == 3 and imagem.shape[-1] == 3:
        return imagem @ PESOS_LUMINANCIA
    return imagem


def gaussian_window(tamanho: int = JANELA_SSIM, sigma: float = SIGMA_SSIM) -> np.ndarray:
    eixo = np.arange(tamanho, dtype=np.float64) - (tamanho - 1) / 2.0
    g = np.exp(-(eixo ** 2) / (2.0 * sigma ** 2))
    janela = np.outer(g, g)
    return janela / janela.sum()


def ssim(pred, gt) -> float:
    """SSIM médio sobre as janelas válidas (L = 1)."""
    a = to_luminance(_numpy(pred))
    b = to_luminance(_numpy(gt))
    validate_same_shape(a, b, "ssim")
    if min(a.shape) < JANELA_SSIM:
        raise ShapeMismatchError(f"Imagem {a.shape} menor que a janela {JANELA_SSIM}x{JANELA_SSIM}")
    janela = gaussian_window()

    def filtro(x):
        return signal.convolve2d(x, janela, mode="valid")

    c1, c2 = K1 ** 2, K2 ** 2
    mu_a, mu_b = filtro(a), filtro(b)
    var_a = filtro(a * a) - mu_a ** 2
    var_b = filtro(b * b) - mu_b ** 2
    cov = filtro(a * b) - mu_a * mu_b
    mapa = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2))
    return float(mapa.mean())


# ========== SEGMENTAÇÃO ==========

def confusion_matrix(pred, gt, n_classes: Optional[int] = None) -> np.ndarray:
    """Matriz C[gt, pred]."""
    pred = _numpy(pred).astype(np.int64).ravel()
    gt = _numpy(gt).astype(np.int64).ravel()
    validate_same_shape(pred, gt, "segmentação")
    observado = int(max(pred.max(initial=0), gt.max(initial=0))) + 1
    n_classes = observado if n_classes is None else max(int(n_classes), observado)
    return np.bincount(gt * n_classes + pred, minlength=n_classes * n_classes).reshape(n_classes, n_classes)


@dataclass
class SegmentationScores:
    miou: float
    total_acc: float
    avg_acc: float
    class_counts: Dict[int, int] = field(default_factory=dict)


def segmentation_metrics(pred, gt, n_classes: Optional[int] = None, exclude_background: bool = False) -> SegmentationScores:
    """
    mIoU e acurácia média sobre as classes presentes na verdade de campo.
    Com `exclude_background`, a classe 0 fica fora das médias (não da acurácia total).
    """
    matriz = confusion_matrix(pred, gt, n_classes).astype(np.float64)
    tp = np.diag(matriz)
    por_gt = matriz.sum(axis=1)
    por_pred = matriz.sum(axis=0)
    presentes = por_gt > 0
    if exclude_background and len(presentes) > 0:
        presentes[0] = False
    total = matriz.sum()
    total_acc = float(tp.sum() / total) if total else 0.0
    if not presentes.any():
        return SegmentationScores(miou=0.0, total_acc=total_acc, avg_acc=0.0)
    iou = tp[presentes] / (por_gt[presentes] + por_pred[presentes] - tp[presentes])
    recall = tp[presentes] / por_gt[presentes]
    contagens = {int(c): int(por_gt[c]) for c in np.flatnonzero(por_gt)}
    return SegmentationScores(
        miou=float(iou.mean()), total_acc=total_acc, avg_acc=float(recall.mean()), class_counts=contagens
    )


def instance_masks(mapa) -> List[np.ndarray]:
    """
    Máscaras por componente conexa de cada rótulo não nulo, ordenadas pelo
    primeiro pixel em ordem raster (independe dos valores dos ids).
    """
    mapa = _numpy(mapa).astype(np.int64)
    mascaras = []
    for valor in np.unique(mapa):
        if valor == 0:
            continue
        componentes, n = ndimage.label(mapa == valor)
        for k in range(1, n + 1):
            mascaras.append(componentes == k)
    mascaras.sort(key=lambda m: int(np.flatnonzero(m.ravel())[0]))
    return mascaras


@dataclass
class APResult:
    ap: float
    tp: int
    fp: int
    fn: int
    per_view: List[float] = field(default_factory=list)


def _ap_vista(pred, gt, limiar: float) -> Tuple[float, int, int, int]:
    predicoes = instance_masks(pred)
    verdades = instance_masks(gt)
    if not predicoes:
        return (1.0 if not verdades else 0.0), 0, 0, len(verdades)
    pares = []
    for ig, mg in enumerate(verdades):
        for ip, mp in enumerate(predicoes):
            uniao = np.logical_or(mg, mp).sum()
            iou = np.logical_and(mg, mp).sum() / uniao if uniao else 0.0
            if iou > 0:
                pares.append((-float(iou), ig, ip))
    pares.sort()
    usados_gt, usados_pred = set(), set()
    tp = 0
    for menos_iou, ig, ip in pares:
        if ig in usados_gt or ip in usados_pred:
            continue
        usados_gt.add(ig)
        usados_pred.add(ip)
        if -menos_iou >= limiar:
            tp += 1
    fp = len(predicoes) - tp
    fn = len(verdades) - tp
    return tp / (tp + fp), tp, fp, fn


def ap75(preds, gts, limiar: float = LIMIAR_AP) -> APResult:
    """
    AP com limiar de IoU 0.75 a partir de mapas de instância (um ou uma lista por vista).
    """
    if isinstance(preds, (np.ndarray, torch.Tensor)) and _numpy(preds).ndim == 2:
        preds, gts = [preds], [gts]
    if len(preds) != len(gts):
        raise ShapeMismatchError(f"{len(preds)} predições para {len(gts)} verdades")
    valores, tp, fp, fn = [], 0, 0, 0
    for p, g in zip(preds, gts):
        valor, t, f, n = _ap_vista(p, g, limiar)
        valores.append(valor)
        tp, fp, fn = tp + t, fp + f, fn + n
    return APResult(ap=float(np.mean(valores)) if valores else 0.0, tp=tp, fp=fp, fn=fn, per_view=valores)


# ========== EXPORTAÇÕES ==========

@dataclass
class PCAExport:
    image: np.ndarray  # H x W x 3 uint8
    components: Optional[np.ndarray]  # k x D (None no fallback)
    fallback: bool = False


def _normalizar(x: np.ndarray) -> np.ndarray:
    minimo, maximo = x.min(), x.max()
    if maximo - minimo < 1e-12:
        return np.full_like(x, 0.5)
    return (x - minimo) / (maximo - minimo)


def pca_feature_export(features, caminho=None, tolerancia: float = 1e-10) -> PCAExport:
    """
    Três componentes principais das características por pixel, normalizadas
    (mín-máx) para RGB. Covariância degenerada cai para tons de cinza (norma).

    Args:
        features: D x H x W.
    """
    dados = _numpy(features).astype(np.float64)
    canais, altura, largura = dados.shape
    pontos = dados.reshape(canais, -1).T
    centrados = pontos - pontos.mean(axis=0, keepdims=True)
    covariancia = centrados.T @ centrados / max(len(pontos) - 1, 1)
    autovalores, autovetores = np.linalg.eigh(covariancia)
    ordem = np.argsort(autovalores)[::-1]
    autovalores, autovetores = autovalores[ordem], autovetores[:, ordem]

    if autovalores.size == 0 or autovalores[0] <= tolerancia:
        logger.warning("PCA degenerada (variância ~0); exportando em tons de cinza")
        cinza = _normalizar(np.linalg.norm(pontos, axis=1))
        imagem = np.repeat(cinza.reshape(altura, largura, 1), 3, axis=-1)
        exportacao = PCAExport(image=np.round(imagem * 255).astype(np.uint8), components=None, fallback=True)
    else:
        k = min(3, canais)
        componentes = autovetores[:, :k].T
        projecao = centrados @ componentes.T
        canais_rgb = [_normalizar(projecao[:, i]) for i in range(k)]
        while len(canais_rgb) < 3:
            canais_rgb.append(np.zeros(len(pontos)))
        imagem = np.stack(canais_rgb, axis=-1).reshape(altura, largura, 3)
        exportacao = PCAExport(image=np.round(imagem * 255).astype(np.uint8), components=componentes)

    if caminho is not None:
        save_png(exportacao.image, caminho)
    return exportacao


def error_map(pred, gt) -> np.ndarray:
    """Erro L2 de cor por pixel (H x W)."""
    pred, gt = _numpy(pred).astype(np.float64), _numpy(gt).astype(np.float64)
    validate_same_shape(pred, gt, "mapa de erro")
    return np.sqrt(((pred - gt) ** 2).sum(axis=-1))


def colorize_error(erro: np.ndarray, maximo: Optional[float] = None) -> np.ndarray:
    """Rampa 'hot' (preto -> vermelho -> amarelo -> branco)."""
    maximo = float(erro.max()) if maximo is None else maximo
    x = np.clip(erro / maximo, 0.0, 1.0) if maximo > 0 else np.zeros_like(erro)
    rgb = np.stack([np.clip(3 * x, 0, 1), np.clip(3 * x - 1, 0, 1), np.clip(3 * x - 2, 0, 1)], axis=-1)
    return np.round(rgb * 255).astype(np.uint8)


def colorize_labels(rotulos, paleta: Sequence[Tuple[int, Sequence[float]]]) -> np.ndarray:
    """Rótulos -> RGB pela paleta; ids fora da paleta recebem cor derivada do id."""
    rotulos = _numpy(rotulos).astype(np.int64)
    cores = {int(cid): np.asarray(cor, dtype=np.float64) for cid, cor in paleta}
    saida = np.zeros(rotulos.shape + (3,), dtype=np.float64)
    for valor in np.unique(rotulos):
        cor = cores.get(int(valor))
        if cor is None:
            cor = np.random.default_rng(int(valor)).uniform(0.2, 1.0, size=3)
        saida[rotulos == valor] = cor
    return np.round(saida * 255).astype(np.uint8)


def save_png(imagem: np.ndarray, caminho):
    caminho = Path(caminho)
    caminho.parent.mkdir(parents=True, exist_ok=True)
    if imagem.dtype != np.uint8:
        imagem = np.round(np.clip(imagem, 0.0, 1.0) * 255).astype(np.uint8)
    Image.fromarray(imagem).save(caminho)
    return caminho


# ========== RELATÓRIO ==========

@dataclass
class EvalReport:
    """Entradas por vista, médias e snapshot da configuração."""

    views: List[Dict[str, Any]] = field(default_factory=list)
    aggregate: Dict[str, float] = field(default_factory=dict)
    class_counts: Dict[str, int] = field(default_factory=dict)
    config: Dict[str, Any] = field(default_factory=dict)

    def add_view(self, entrada: Dict[str, Any]):
        self.views.append(entrada)

    def finalize(self) -> "EvalReport":
        chaves = sorted({k for v in self.views for k, valor in v.items() if isinstance(valor, (int, float)) and k not in ("view", "tp", "fp", "fn")})
        self.aggregate = {k: float(np.mean([v[k] for v in self.views if k in v])) for k in chaves}
        for nome in ("tp", "fp", "fn"):
            if any(nome in v for v in self.views):
                self.aggregate[nome] = int(sum(v.get(nome, 0) for v in self.views))
        contagens: Dict[str, int] = {}
        for v in self.views:
            for classe, n in v.get("class_counts", {}).items():
                contagens[str(classe)] = contagens.get(str(classe), 0) + int(n)
        self.class_counts = contagens
        return self

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def save(self, caminho) -> Path:
        caminho = Path(caminho)
        caminho.parent.mkdir(parents=True, exist_ok=True)
        with open(caminho, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)
        return caminho

    def summary_table(self) -> str:
        linhas = [f"{'métrica':<12}{'valor':>12}"]
        for chave, valor in self.aggregate.items():
            linhas.append(f"{chave:<12}{valor:>12.4f}" if isinstance(valor, float) else f"{chave:<12}{valor:>12}")
        return "\n".join(linhas)


def evaluate_view(pred_rgb, gt_rgb, pred_labels, gt_labels, n_classes: int, instance_mode: bool = False, exclude_background: bool = False) -> Dict[str, Any]:
    """Métricas de uma vista; em modo instância inclui AP75."""
    entrada: Dict[str, Any] = {"psnr": psnr(pred_rgb, gt_rgb), "ssim": ssim(pred_rgb, gt_rgb)}
    notas = segmentation_metrics(pred_labels, gt_labels, n_classes, exclude_background)
    entrada.update(miou=notas.miou, total_acc=notas.total_acc, avg_acc=notas.avg_acc, class_counts=notas.class_counts)
    if instance_mode:
        resultado = ap75(pred_labels, gt_labels)
        entrada.update(ap75=resultado.ap, tp=resultado.tp, fp=resultado.fp, fn=resultado.fn)
    return entrada


def export_view_images(renderizada, vista, paleta, pasta, prefixo: str) -> List[Path]:
    """Grava as 4 imagens de uma vista: RGB, rótulos, PCA e mapa de erro."""
    pasta = Path(pasta)
    rgb = _numpy(renderizada.rgb)
    caminhos = [
        save_png(rgb, pasta / f"{prefixo}_rgb.png"),
        save_png(colorize_labels(renderizada.labels, paleta), pasta / f"{prefixo}_labels.png"),
    ]
    pca_feature_export(renderizada.sem_map.features, pasta / f"{prefixo}_pca.png")
    caminhos.append(pasta / f"{prefixo}_pca.png")
    if vista is not None:
        caminhos.append(save_png(colorize_error(error_map(rgb, vista.rgb)), pasta / f"{prefixo}_error.png"))
    return caminhos


def render_scene_view(modelo, cena, indice: int, run_config):
    """Renderiza a vista `indice` a partir das N_ref vistas de treino mais próximas."""
    from src.models.gpnerf import render_view
    from src.utils.trainer import select_reference_views

    cameras = [v.camera for v in cena.views]
    n_ref = min(run_config.n_ref_views, len([i for i in cena.train_views if i != indice]))
    referencias = select_reference_views(cameras, indice, cena.train_views, n_ref)
    return render_view(
        modelo,
        [cena.view(i).rgb for i in referencias],
        [cameras[i] for i in referencias],
        cameras[indice],
        run_config.samples_per_ray,
        cena.t_near,
        cena.t_far,
        chunk=run_config.chunk_rays,
    )


def evaluate_model(modelo, dataset, run_config, instance_mode: bool = False, pasta_imagens=None) -> EvalReport:
    """Renderiza todas as vistas de teste do dataset e calcula as métricas."""
    relatorio = EvalReport(config=run_config.to_dict())
    modelo.eval()
    for cena in dataset.scenes:
        for indice in cena.test_views:
            vista = cena.view(indice)
            renderizada = render_scene_view(modelo, cena, indice, run_config)
            gt = vista.instance if instance_mode else vista.semantic
            entrada = evaluate_view(
                renderizada.rgb, vista.rgb, renderizada.labels, gt, modelo.n_classes,
                instance_mode, run_config.exclude_background_miou,
            )
            entrada.update(scene=cena.name, view=int(indice))
            relatorio.add_view(entrada)
            if pasta_imagens is not None:
                export_view_images(renderizada, vista, run_config.class_palette(), pasta_imagens, f"{cena.name}_{indice:04d}")
            logger.info(f"{cena.name}/{indice}: PSNR {entrada['psnr']:.2f} dB, mIoU {entrada['miou']:.3f}")
    return relatorio.finalize()
