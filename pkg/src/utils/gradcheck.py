# /src/utils/gradcheck.py

"""
Verificação de gradientes em micrografos.

Cada verificação registrada devolve uma função escalar e a lista de tensores
(parâmetros ou entradas) a verificar. A derivada automática é comparada com
diferenças centrais (float64, h = 1e-6) num subconjunto determinístico de
entradas de cada tensor, com tolerância relativa 1e-3.

Uso:
    from src.utils.gradcheck import run_gradcheck
    resultados = run_gradcheck()            # todas
    resultados = run_gradcheck(["fat"])     # uma
"""

import logging
import time
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import torch

from src.models.backbone import MultiScaleFeatureExtractor, block_gradient, extract_features
from src.models.fields import (
    FieldAggregationTransformer,
    RadianceSemanticFields,
    RayAggregationTransformer,
    render_color,
    render_rays,
    render_semantic,
    semantic_field,
)
from src.models.perception_head import PerceptionHead, decode, split_features
from src.utils.exceptions import GradcheckFailure
from src.utils.losses import (
    depth_guided_distill_loss,
    photometric_loss,
    semantic_ce_loss,
    semantic_distill_loss,
)

logger = logging.getLogger(__name__)

PASSO_FD = 1e-6
TOLERANCIA_RELATIVA = 1e-3
PISO_ABSOLUTO = 1e-7
ENTRADAS_POR_TENSOR = 4

# Micrografo: R raios, M pontos, N vistas, D_rgb canais
R, M, N, D = 2, 4, 3, 8

Problema = Tuple[Callable[[], torch.Tensor], List[torch.Tensor]]
CHECKS: Dict[str, Callable[[torch.Generator], Problema]] = {}


def register_check(nome: str):
    def decorator(construtor):
        CHECKS[nome] = construtor
        return construtor

    return decorator


@dataclass
class GradcheckResult:
    name: str
    passed: bool
    max_rel_error: float
    n_entries: int
    seconds: float
    message: str = ""


def _indices(numel: int, quantidade: int = ENTRADAS_POR_TENSOR) -> List[int]:
    return sorted({int(i) for i in np.linspace(0, numel - 1, num=min(quantidade, numel))})


def compare_gradients(funcao: Callable[[], torch.Tensor], tensores: Sequence[torch.Tensor], h: float = PASSO_FD, tol: float = TOLERANCIA_RELATIVA):
    """
    Returns:
        (maior erro relativo, entradas verificadas, aprovado)
    """
    gradientes = torch.autograd.grad(funcao(), list(tensores), allow_unused=True)
    pior, total, aprovado = 0.0, 0, True
    with torch.no_grad():
        for tensor, gradiente in zip(tensores, gradientes):
            analitico = torch.zeros_like(tensor) if gradiente is None else gradiente
            plano = tensor.view(-1)
            for k in _indices(plano.numel()):
                original = plano[k].item()
                plano[k] = original + h
                mais = funcao().item()
                plano[k] = original - h
                menos = funcao().item()
                plano[k] = original
                numerico = (mais - menos) / (2.0 * h)
                a = analitico.reshape(-1)[k].item()
                diferenca = abs(a - numerico)
                escala = max(abs(a), abs(numerico))
                erro = diferenca / escala if escala > 0 else 0.0
                if diferenca > tol * escala + PISO_ABSOLUTO:
                    aprovado = False
                pior = max(pior, erro if diferenca > PISO_ABSOLUTO else 0.0)
                total += 1
    return pior, total, aprovado


def _aleatorio(gerador, *forma, escala=1.0):
    return (torch.randn(*forma, generator=gerador, dtype=torch.float64) * escala).requires_grad_(True)


def _pesos(gerador, *forma):
    return torch.randn(*forma, generator=gerador, dtype=torch.float64)


def _parametros(modulo: torch.nn.Module, maximo: int = 3) -> List[torch.Tensor]:
    parametros = [p for p in modulo.parameters() if p.requires_grad]
    passo = max(1, len(parametros) // maximo)
    return parametros[::passo][:maximo]


# ========== VERIFICAÇÕES ==========

@register_check("backbone")
def _check_backbone(gerador) -> Problema:
    extrator = MultiScaleFeatureExtractor((2, 2, 2, 2), d_rgb=4, d_sem=8).double()
    imagem = torch.rand(1, 3, 16, 16, generator=gerador, dtype=torch.float64)
    w_rgb, w_sem = _pesos(gerador, 1, 4, 4, 4), _pesos(gerador, 1, 8, 4, 4)

    def funcao():
        saida = extrator(imagem)
        return (saida.rgb * w_rgb).sum() + (saida.sem * w_sem).sum()

    return funcao, _parametros(extrator)


@register_check("fat")
def _check_fat(gerador) -> Problema:
    fat = FieldAggregationTransformer(D).double()
    x_rgb = _aleatorio(gerador, R, M, N, D)
    rel = _aleatorio(gerador, R, M, N, 3, escala=0.3)
    mascara = torch.ones(R, M, N, dtype=torch.bool)
    mascara[0, 1, 2] = False
    x_sem = _aleatorio(gerador, R, M, N, 2 * D)
    w1, w2, w3 = _pesos(gerador, R, M, D), _pesos(gerador, R, M, N), _pesos(gerador, R, M, 2 * D)

    def funcao():
        x0 = (x_rgb * mascara.unsqueeze(-1)).sum(-2) / mascara.sum(-1, keepdim=True)
        saida = fat(x0, x_rgb, rel, mascara)
        f_sem = semantic_field(saida.attention, x_sem, saida.positional)
        return (saida.rgb * w1).sum() + (saida.attention * w2).sum() + (f_sem * w3).sum()

    return funcao, [x_rgb, x_sem] + _parametros(fat)


@register_check("rat")
def _check_rat(gerador) -> Problema:
    rat = RayAggregationTransformer(D, 6, 6).double()
    f_rgb = _aleatorio(gerador, R, M, D)
    pos, direcao = _aleatorio(gerador, R, M, 6), _aleatorio(gerador, R, M, 6)
    w1, w2 = _pesos(gerador, R, M, D), _pesos(gerador, R, M)

    def funcao():
        s2d, a_rat = rat(f_rgb, pos, direcao)
        return (s2d * w1).sum() + (a_rat * w2).sum()

    return funcao, [f_rgb] + _parametros(rat)


@register_check("render_color")
def _check_render_color(gerador) -> Problema:
    campos = RadianceSemanticFields(D, D, pe_frequencies=1).double()
    s2d = _aleatorio(gerador, R, M, D)
    w = _pesos(gerador, R, 3)
    return (lambda: (render_color(campos.color_mlp, s2d) * w).sum()), [s2d] + _parametros(campos.color_mlp)


@register_check("render_semantic")
def _check_render_semantic(gerador) -> Problema:
    campos = RadianceSemanticFields(D, D, pe_frequencies=1).double()
    logits = _aleatorio(gerador, R, M)
    f_sem = _aleatorio(gerador, R, M, D)
    w = _pesos(gerador, R, D)

    def funcao():
        return (render_semantic(campos.sem_mlp, torch.softmax(logits, -1), f_sem) * w).sum()

    return funcao, [logits, f_sem] + _parametros(campos.sem_mlp)


@register_check("head")
def _check_head(gerador) -> Problema:
    cabeca = PerceptionHead(d_sem=8, n_classes=3).double()
    mapa = _aleatorio(gerador, 8, 8, 8)
    w = _pesos(gerador, 3, 16, 16)

    def funcao():
        return (decode(cabeca, split_features(mapa), (16, 16)) * w).sum()

    return funcao, [mapa] + _parametros(cabeca)


@register_check("photometric")
def _check_photometric(gerador) -> Problema:
    pred = _aleatorio(gerador, R, 3)
    gt = torch.rand(R, 3, generator=gerador, dtype=torch.float64)
    return (lambda: photometric_loss(pred, gt)), [pred]


@register_check("semantic_ce")
def _check_semantic_ce(gerador) -> Problema:
    logits = _aleatorio(gerador, 3, 4, 4)
    rotulos = torch.randint(0, 3, (4, 4), generator=gerador)
    pesos = torch.rand(4, 4, generator=gerador, dtype=torch.float64) + 0.5
    return (lambda: semantic_ce_loss(logits, rotulos, pesos)), [logits]


@register_check("semantic_distill")
def _check_semantic_distill(gerador) -> Problema:
    aluno = _aleatorio(gerador, R, D)
    professor = _pesos(gerador, R, D)
    return (lambda: semantic_distill_loss(aluno, professor)), [aluno]


@register_check("depth_guided")
def _check_depth_guided(gerador) -> Problema:
    pontos = _aleatorio(gerador, R, 8, D)
    ts = torch.linspace(0.5, 4.0, 8, dtype=torch.float64).expand(R, 8)
    profundidade = torch.tensor([1.0, 3.0], dtype=torch.float64)
    professor = _pesos(gerador, R, D)
    return (lambda: depth_guided_distill_loss(pontos, ts, profundidade, professor, 0.5, 4.0, n_p=2)), [pontos]


def _micro_cena(gerador):
    """Três vistas de referência e raios de uma quarta, numa sala pequena."""
    from src.config import PALETA_BASE
    from src.models.scene import SceneConfig
    from src.utils.geometry import CameraStack, generate_rays
    from src.utils.scene_oracle import generate_scene, render_view_oracle, sample_camera_ring

    config = SceneConfig(
        room_extent=(4.0, 4.0, 2.5), n_objects=1, class_palette=[(0, PALETA_BASE[0]), (1, PALETA_BASE[1])],
        image_size=(16, 16), seed=3, t_near=0.1, t_far=6.0,
    )
    cena = generate_scene(config)
    cameras = sample_camera_ring(cena, N + 1, seed=4)
    imagens = [render_view_oracle(cena, c).rgb for c in cameras[:N]]
    pilha = CameraStack.from_cameras(cameras[:N], dtype=torch.float64)
    raios = generate_rays(cameras[N], torch.tensor([[6.0, 7.0], [10.0, 9.0]]), config.t_near, config.t_far, dtype=torch.float64)
    return imagens, pilha, raios


@register_check("render_rays")
def _check_render_rays(gerador) -> Problema:
    extrator = MultiScaleFeatureExtractor((2, 2, 2, 2), d_rgb=D, d_sem=D).double()
    campos = RadianceSemanticFields(D, D, pe_frequencies=1).double()
    imagens, pilha, raios = _micro_cena(gerador)
    gt = torch.rand(R, 3, generator=gerador, dtype=torch.float64)

    def funcao():
        feats = extract_features(extrator, imagens)
        return photometric_loss(render_rays(campos, raios, feats, pilha, M).color, gt)

    return funcao, _parametros(campos, maximo=4)


@register_check("gradient_block")
def _check_gradient_block(gerador) -> Problema:
    """
    L_SD + L_DG sobre características bloqueadas: gradiente do extrator
    exatamente zero e gradiente dos transformers não nulo e correto.
    """
    extrator = MultiScaleFeatureExtractor((2, 2, 2, 2), d_rgb=D, d_sem=D).double()
    campos = RadianceSemanticFields(D, D, pe_frequencies=1).double()
    imagens, pilha, raios = _micro_cena(gerador)
    professor = _pesos(gerador, R, D)
    profundidade = torch.tensor([2.0, 3.0], dtype=torch.float64)

    def perda():
        feats = block_gradient(extract_features(extrator, imagens))
        saida = render_rays(campos, raios, feats, pilha, M)
        return semantic_distill_loss(saida.sem, professor) + depth_guided_distill_loss(
            saida.point_sem, saida.ts, profundidade, professor, raios.t_near, raios.t_far
        )

    gradientes = torch.autograd.grad(perda(), list(extrator.parameters()), allow_unused=True)
    if any(g is not None and bool(g.abs().max() > 0) for g in gradientes):
        raise GradcheckFailure(["gradient_block (extrator recebeu gradiente)"])
    transformers = torch.autograd.grad(perda(), list(campos.fat_blocks.parameters()), allow_unused=True)
    if all(g is None or bool(g.abs().max() == 0) for g in transformers):
        raise GradcheckFailure(["gradient_block (transformers sem gradiente)"])
    return perda, _parametros(campos.fat_blocks)


# ========== EXECUÇÃO ==========

def run_check(nome: str, semente: int = 0) -> GradcheckResult:
    gerador = torch.Generator().manual_seed(semente)
    torch.manual_seed(semente)
    inicio = time.perf_counter()
    try:
        funcao, tensores = CHECKS[nome](gerador)
        pior, total, aprovado = compare_gradients(funcao, tensores)
        mensagem = "" if aprovado else f"erro relativo {pior:.2e} > {TOLERANCIA_RELATIVA}"
    except GradcheckFailure as e:
        pior, total, aprovado, mensagem = float("nan"), 0, False, str(e)
    decorrido = time.perf_counter() - inicio
    return GradcheckResult(nome, aprovado, pior, total, decorrido, mensagem)


def run_gradcheck(nomes: Optional[Iterable[str]] = None, semente: int = 0, raise_on_failure: bool = False) -> List[GradcheckResult]:
    """
    Roda as verificações pedidas (todas por padrão).

    Raises:
        KeyError: nome desconhecido.
        GradcheckFailure: com `raise_on_failure`, se alguma falhar (nomeia as verificações).
    """
    nomes = list(CHECKS) if nomes is None else list(nomes)
    desconhecidos = [n for n in nomes if n not in CHECKS]
    if desconhecidos:
        raise KeyError(f"Verificações desconhecidas: {', '.join(desconhecidos)}")
    resultados = []
    for nome in nomes:
        resultado = run_check(nome, semente)
        nivel = logging.INFO if resultado.passed else logging.ERROR
        logger.log(nivel, f"gradcheck {nome}: {'ok' if resultado.passed else 'FALHOU'} "
                          f"({resultado.n_entries} entradas, erro máx {resultado.max_rel_error:.2e}, {resultado.seconds:.2f}s)")
        resultados.append(resultado)
    falhas = [r.name for r in resultados if not r.passed]
    if falhas and raise_on_failure:
        raise GradcheckFailure(falhas)
    return resultados
