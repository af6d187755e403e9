# tests/test_losses.py

import math

import pytest
import torch
import torch.nn.functional as F

from src.utils.exceptions import ConfigError, LabelError, ShapeMismatchError
from src.utils.losses import (
    LossWeights,
    build_report,
    depth_guided_distill_loss,
    photometric_loss,
    semantic_ce_loss,
    semantic_distill_loss,
    total_loss,
)


@pytest.fixture
def gerador():
    return torch.Generator().manual_seed(0)


def test_fotometrica_conhecida():
    pred = torch.full((1, 3), 0.5, dtype=torch.float64)
    gt = torch.tensor([[0.5, 0.4, 0.5]], dtype=torch.float64)
    assert float(photometric_loss(pred, gt)) == pytest.approx(0.01)


def test_fotometrica_formatos_diferentes():
    with pytest.raises(ShapeMismatchError):
        photometric_loss(torch.zeros(2, 3), torch.zeros(3, 3))


def test_entropia_cruzada_igual_a_referencia(gerador):
    logits = torch.randn(4, 5, 6, generator=gerador, dtype=torch.float64)
    rotulos = torch.randint(0, 4, (5, 6), generator=gerador)
    esperado = F.cross_entropy(logits.unsqueeze(0), rotulos.unsqueeze(0), reduction="sum")
    torch.testing.assert_close(semantic_ce_loss(logits, rotulos), esperado)


def test_entropia_cruzada_logits_uniformes():
    logits = torch.zeros(4, 2, 2, dtype=torch.float64)
    rotulos = torch.tensor([[0, 1], [2, 3]])
    assert float(semantic_ce_loss(logits, rotulos)) == pytest.approx(4 * math.log(4))


def test_entropia_cruzada_com_pesos(gerador):
    logits = torch.randn(10, 3, generator=gerador, dtype=torch.float64)
    rotulos = torch.randint(0, 3, (10,), generator=gerador)
    pesos = torch.zeros(10, dtype=torch.float64)
    pesos[2] = 2.0
    esperado = 2.0 * F.cross_entropy(logits[2:3], rotulos[2:3], reduction="sum")
    torch.testing.assert_close(semantic_ce_loss(logits, rotulos, pesos), esperado)


def test_entropia_cruzada_estavel_com_logits_grandes():
    logits = torch.tensor([[1000.0, 0.0]], dtype=torch.float64)
    assert float(semantic_ce_loss(logits, torch.tensor([0]))) == pytest.approx(0.0)
    assert math.isfinite(float(semantic_ce_loss(logits, torch.tensor([1]))))


def test_rotulo_fora_do_intervalo():
    with pytest.raises(LabelError):
        semantic_ce_loss(torch.zeros(3, 2, 2), torch.tensor([[0, 1], [2, 3]]))
    with pytest.raises(LabelError):
        semantic_ce_loss(torch.zeros(2, 3), torch.tensor([0, -1]))


def test_destilacao_casos_triviais():
    v = torch.tensor([[1.0, 2.0, -0.5]], dtype=torch.float64)
    assert float(semantic_distill_loss(v, v)) == pytest.approx(0.0, abs=1e-12)
    assert float(semantic_distill_loss(v, -v)) == pytest.approx(2.0)
    assert float(semantic_distill_loss(v, 3.0 * v)) == pytest.approx(0.0, abs=1e-12)


def test_destilacao_limitada(gerador):
    a = torch.randn(10_000, 8, generator=gerador, dtype=torch.float64)
    b = torch.randn(10_000, 8, generator=gerador, dtype=torch.float64)
    for i in range(0, 10_000, 1000):
        perda = float(semantic_distill_loss(a[i:i + 1], b[i:i + 1]))
        assert 0.0 <= perda <= 2.0
    total = float(semantic_distill_loss(a, b))
    assert 0.0 <= total <= 2.0 * 10_000


def test_destilacao_norma_zero_contada():
    contagens = {}
    aluno = torch.tensor([[0.0, 0.0], [1.0, 0.0]], dtype=torch.float64)
    professor = torch.tensor([[1.0, 1.0], [1.0, 0.0]], dtype=torch.float64)
    perda = semantic_distill_loss(aluno, professor, counts=contagens)
    assert float(perda) == pytest.approx(1.0)
    assert contagens["sd_zero_norm"] == 1


def test_destilacao_professor_sem_gradiente():
    aluno = torch.tensor([[1.0, 2.0]], dtype=torch.float64, requires_grad=True)
    professor = torch.tensor([[2.0, -1.0]], dtype=torch.float64, requires_grad=True)
    semantic_distill_loss(aluno, professor).backward()
    assert aluno.grad is not None
    assert professor.grad is None


def _raio_unico(f_pontos, professor, profundidade):
    ts = torch.tensor([[1.0, 2.0, 3.0, 4.0, 5.0]], dtype=torch.float64)
    return depth_guided_distill_loss(
        f_pontos.unsqueeze(0), ts, torch.tensor([profundidade], dtype=torch.float64),
        professor.unsqueeze(0), t_near=0.5, t_far=5.5, n_p=1,
    )


def test_guiada_por_profundidade_casos_triviais():
    v = torch.tensor([1.0, 0.0], dtype=torch.float64)
    perpendicular = torch.tensor([0.0, 1.0], dtype=torch.float64)
    # profundidade no índice 0; perto = {0}, faixa de igualdade = {1}, longe = {2, 3, 4}
    pontos_perto_iguais_longe_ortogonais = torch.stack([v, v, perpendicular, perpendicular, perpendicular])
    assert float(_raio_unico(pontos_perto_iguais_longe_ortogonais, v, 1.0)) == pytest.approx(0.0, abs=1e-12)

    pontos_longe_opostos = torch.stack([v, v, -v, -v, -v])
    assert float(_raio_unico(pontos_longe_opostos, v, 1.0)) == pytest.approx(0.0, abs=1e-12)

    pontos_tudo_igual = torch.stack([v] * 5)
    # três pontos longe com cos = 1
    assert float(_raio_unico(pontos_tudo_igual, v, 1.0)) == pytest.approx(3.0)


def test_guiada_faixa_de_igualdade_nao_contribui():
    v = torch.tensor([1.0, 0.0], dtype=torch.float64)
    # profundidade no índice 2: índices 1 e 3 estão na faixa |i - i_d| == 1
    pontos = torch.stack([-v, -v, v, v, -v])
    assert float(_raio_unico(pontos, v, 3.0)) == pytest.approx(0.0, abs=1e-12)


def test_guiada_sem_profundidade(gerador):
    contagens = {}
    pontos = torch.randn(3, 4, 8, generator=gerador, dtype=torch.float64, requires_grad=True)
    ts = torch.linspace(1.0, 4.0, 4, dtype=torch.float64).expand(3, 4)
    professor = torch.randn(3, 8, generator=gerador, dtype=torch.float64)
    perda = depth_guided_distill_loss(pontos, ts, None, professor, 0.5, 4.5, counts=contagens)
    assert float(perda) == 0.0
    assert contagens["dg_missing_depth"] == 3

    parcial = {}
    profundidade = torch.tensor([2.0, float("nan"), 3.0], dtype=torch.float64)
    depth_guided_distill_loss(pontos, ts, profundidade, professor, 0.5, 4.5, counts=parcial)
    assert parcial["dg_missing_depth"] == 1


def test_soma_ponderada_e_mascaramento():
    termos = {
        "rgb": torch.tensor(1.0), "sem": torch.tensor(2.0), "sd": torch.tensor(3.0), "dg": torch.tensor(4.0),
    }
    pesos = LossWeights(rgb=1.0, sem=0.5, sd=0.0, dg=2.0)
    assert float(total_loss(termos, pesos)) == pytest.approx(1.0 + 1.0 + 8.0)
    # termo ausente conta zero
    assert float(total_loss({"rgb": torch.tensor(1.0)}, pesos)) == pytest.approx(1.0)
    # linearidade nos pesos
    dobro = LossWeights(rgb=2.0, sem=1.0, sd=0.0, dg=4.0)
    assert float(total_loss(termos, dobro)) == pytest.approx(2 * float(total_loss(termos, pesos)))


def test_peso_negativo():
    with pytest.raises(ConfigError):
        total_loss({"rgb": torch.tensor(1.0)}, LossWeights(rgb=-1.0))


def test_relatorio_do_passo():
    termos = {"rgb": torch.tensor(0.4), "sem": torch.tensor(1.0)}
    relatorio = build_report(termos, LossWeights(), n_rays=4, counts={"sd_zero_norm": 2})
    assert relatorio.total == pytest.approx(1.4)
    assert relatorio.rgb_mean == pytest.approx(0.1)
    assert relatorio.is_finite()
    linha = relatorio.log_row(step=3, lr=0.01)
    assert list(linha) == ["step", "lr", "L_rgb", "L_sem", "L_SD", "L_DG", "L_all"]
    assert linha["step"] == 3
