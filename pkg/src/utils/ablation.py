# /src/utils/ablation.py

"""
Grade de ablação das perdas de destilação.

Variantes (sobre o mesmo dataset, com `ablation_repeats` sementes):
    baseline          sem L_SD e sem L_DG
    sd_sem_bloqueio   L_SD sem bloqueio de gradiente
    sd_com_bloqueio   L_SD com bloqueio de gradiente
    sd_dg             L_SD + L_DG com bloqueio

Cada execução treina do zero, avalia as vistas de teste e guarda mIoU e PSNR.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from src.utils.evaluator import evaluate_model
from src.utils.trainer import train

logger = logging.getLogger(__name__)

VARIANTES: Dict[str, Dict[str, bool]] = {
    "baseline": {"use_semantic_distill": False, "use_depth_guided": False, "use_gradient_block": False},
    "sd_sem_bloqueio": {"use_semantic_distill": True, "use_depth_guided": False, "use_gradient_block": False},
    "sd_com_bloqueio": {"use_semantic_distill": True, "use_depth_guided": False, "use_gradient_block": True},
    "sd_dg": {"use_semantic_distill": True, "use_depth_guided": True, "use_gradient_block": True},
}
QUEDA_MAXIMA_PSNR_DB = 0.5


@dataclass
class AblationRun:
    variant: str
    seed: int
    miou: float
    psnr: float


@dataclass
class AblationSummary:
    """Execuções individuais, médias por variante e as checagens de direção."""

    runs: List[AblationRun] = field(default_factory=list)
    means: Dict[str, Dict[str, float]] = field(default_factory=dict)
    checks: Dict[str, bool] = field(default_factory=dict)
    config: Dict[str, Any] = field(default_factory=dict)

    def finalize(self) -> "AblationSummary":
        for variante in VARIANTES:
            execucoes = [r for r in self.runs if r.variant == variante]
            if not execucoes:
                continue
            psnrs = [r.psnr for r in execucoes if math.isfinite(r.psnr)]
            self.means[variante] = {
                "miou": float(np.mean([r.miou for r in execucoes])),
                "psnr": float(np.mean(psnrs)) if psnrs else float("inf"),
                "repeats": len(execucoes),
            }
        if {"baseline", "sd_com_bloqueio"} <= self.means.keys():
            self.checks["sd_block_improves_miou"] = (
                self.means["sd_com_bloqueio"]["miou"] >= self.means["baseline"]["miou"]
            )
        if {"sd_com_bloqueio", "sd_dg"} <= self.means.keys():
            self.checks["dg_keeps_psnr"] = (
                self.means["sd_dg"]["psnr"] >= self.means["sd_com_bloqueio"]["psnr"] - QUEDA_MAXIMA_PSNR_DB
            )
        return self

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def save(self, caminho) -> Path:
        caminho = Path(caminho)
        caminho.parent.mkdir(parents=True, exist_ok=True)
        with open(caminho, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)
        return caminho


def run_ablation(dataset, run_config, output_dir=None, variantes: Optional[List[str]] = None) -> AblationSummary:
    """
    Roda a grade de ablação.

    Args:
        dataset: Dataset com vistas de teste.
        run_config: configuração base; as sementes são seed, seed+1, ...
        output_dir: se dado, cada execução grava checkpoint e log em
            `output_dir/<variante>_s<semente>/` e o resumo em `ablation.json`.
        variantes: subconjunto de VARIANTES (todas por padrão).
    """
    nomes = list(VARIANTES) if variantes is None else list(variantes)
    for nome in nomes:
        if nome not in VARIANTES:
            raise KeyError(f"Variante de ablação desconhecida: {nome}")

    resumo = AblationSummary(config=run_config.to_dict())
    for repeticao in range(run_config.ablation_repeats):
        semente = run_config.seed + repeticao
        for nome in nomes:
            config = run_config.replace(seed=semente, **VARIANTES[nome])
            pasta = Path(output_dir) / f"{nome}_s{semente}" if output_dir else None
            resultado = train(dataset, config, pasta)
            relatorio = evaluate_model(resultado.model, dataset, config)
            execucao = AblationRun(nome, semente, relatorio.aggregate["miou"], relatorio.aggregate["psnr"])
            resumo.runs.append(execucao)
            logger.info(f"Ablação {nome} (semente {semente}): mIoU {execucao.miou:.3f}, PSNR {execucao.psnr:.2f} dB")

    resumo.finalize()
    if output_dir:
        resumo.save(Path(output_dir) / "ablation.json")
    return resumo
