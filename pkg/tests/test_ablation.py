# tests/test_ablation.py

import json

import numpy as np
import pytest

from src.config import load_run_config
from src.utils.ablation import VARIANTES, AblationRun, AblationSummary, run_ablation
from src.utils.dataset_io import build_dataset
from src.utils.evaluator import evaluate_model
from src.utils.trainer import train
from tests.conftest import slow


def test_checagens_de_direcao():
    resumo = AblationSummary(runs=[
        AblationRun("baseline", 0, miou=0.40, psnr=20.0),
        AblationRun("baseline", 1, miou=0.50, psnr=21.0),
        AblationRun("sd_com_bloqueio", 0, miou=0.55, psnr=21.0),
        AblationRun("sd_com_bloqueio", 1, miou=0.45, psnr=21.0),
        AblationRun("sd_dg", 0, miou=0.60, psnr=20.6),
    ]).finalize()
    assert resumo.means["baseline"]["miou"] == pytest.approx(0.45)
    assert resumo.means["baseline"]["repeats"] == 2
    assert resumo.checks == {"sd_block_improves_miou": True, "dg_keeps_psnr": True}


def test_queda_de_psnr_acima_do_limite():
    resumo = AblationSummary(runs=[
        AblationRun("sd_com_bloqueio", 0, miou=0.5, psnr=22.0),
        AblationRun("sd_dg", 0, miou=0.5, psnr=21.4),
    ]).finalize()
    assert resumo.checks == {"dg_keeps_psnr": False}


def test_variante_desconhecida(dataset_pequeno, config_teste):
    with pytest.raises(KeyError):
        run_ablation(dataset_pequeno, config_teste, variantes=["sem_nome"])


def test_grade_pequena(tmp_path, dataset_pequeno, config_teste):
    config = config_teste.replace(ablation_repeats=1)
    resumo = run_ablation(dataset_pequeno, config, tmp_path, variantes=["baseline", "sd_com_bloqueio"])
    assert [(r.variant, r.seed) for r in resumo.runs] == [
        ("baseline", config.seed), ("sd_com_bloqueio", config.seed),
    ]
    assert "sd_block_improves_miou" in resumo.checks
    dados = json.loads((tmp_path / "ablation.json").read_text(encoding="utf-8"))
    assert set(dados["means"]) == {"baseline", "sd_com_bloqueio"}
    assert (tmp_path / f"baseline_s{config.seed}" / "checkpoint.zip").exists()


def test_variantes_alternam_as_perdas():
    assert not VARIANTES["baseline"]["use_semantic_distill"]
    assert VARIANTES["sd_dg"]["use_depth_guided"] and VARIANTES["sd_dg"]["use_gradient_block"]


@pytest.fixture(scope="module")
def cena_de_bancada():
    config = load_run_config(perfil="desk").replace(n_scenes=1)
    return config, build_dataset(config)


@slow
def test_sobreajuste_em_uma_cena(tmp_path, cena_de_bancada):
    config, dataset = cena_de_bancada
    resultado = train(dataset, config, tmp_path)
    totais = [r.total for r in resultado.reports]
    decimo = max(1, len(totais) // 10)
    assert np.median(totais[-decimo:]) < np.median(totais[:decimo])

    relatorio = evaluate_model(resultado.model, dataset, config)
    assert relatorio.aggregate["psnr"] >= 24.0
    assert relatorio.aggregate["miou"] >= 0.80


@slow
def test_direcao_da_ablacao(cena_de_bancada):
    config, dataset = cena_de_bancada
    resumo = run_ablation(dataset, config, variantes=["baseline", "sd_com_bloqueio", "sd_dg"])
    assert resumo.checks["sd_block_improves_miou"]
    assert resumo.checks["dg_keeps_psnr"]
