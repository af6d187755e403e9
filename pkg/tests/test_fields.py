# tests/test_fields.py

import pytest
import torch

from src.models.backbone import extract_features
from src.models.fields import (
    FieldAggregationTransformer,
    RadianceSemanticFields,
    RayAggregationTransformer,
    aggregate_semantic,
    positional_encoding,
    encoding_dim,
    rat_aggregate,
    render_color,
    render_rays,
    semantic_field,
)
from src.utils.geometry import CameraStack, generate_rays, pixel_centers
from src.utils.trainer import select_reference_views

R, M, N, D = 5, 6, 4, 8


@pytest.fixture
def gerador():
    return torch.Generator().manual_seed(0)


@pytest.fixture
def fat():
    torch.manual_seed(1)
    return FieldAggregationTransformer(D).double()


def _entradas_fat(gerador, r=R, escala=1.0):
    x_rgb = escala * torch.randn(r, M, N, D, generator=gerador, dtype=torch.float64)
    rel = 0.3 * torch.randn(r, M, N, 3, generator=gerador, dtype=torch.float64)
    mascara = torch.rand(r, M, N, generator=gerador) > 0.3
    x0 = x_rgb.mean(dim=-2)
    return x0, x_rgb, rel, mascara


@pytest.mark.parametrize("escala", [1.0, 1e3])
def test_linhas_de_a_fat_somam_um(fat, gerador, escala):
    # 200 raios x M pontos; escala 1e3 força logits grandes no softmax
    x0, x_rgb, rel, mascara = _entradas_fat(gerador, r=200, escala=escala)
    saida = fat(x0, x_rgb, rel, mascara)
    assert bool(torch.isfinite(saida.attention).all())
    validos = mascara.any(dim=-1)
    somas = saida.attention.sum(dim=-1)
    torch.testing.assert_close(somas[validos], torch.ones_like(somas[validos]), atol=1e-6, rtol=0)
    # vistas mascaradas recebem exatamente zero
    assert bool((saida.attention[~mascara] == 0).all())


def test_ponto_sem_vista_valida(fat, gerador):
    x0, x_rgb, rel, mascara = _entradas_fat(gerador)
    mascara[0, 0] = False
    saida = fat(x0, x_rgb, rel, mascara)
    assert not bool(saida.point_valid[0, 0])
    assert bool((saida.rgb[0, 0] == 0).all())
    assert bool((saida.attention[0, 0] == 0).all())


def test_vista_unica_recebe_peso_um(fat, gerador):
    x0, x_rgb, rel, _ = _entradas_fat(gerador)
    mascara = torch.zeros(R, M, N, dtype=torch.bool)
    mascara[..., 2] = True
    saida = fat(x0, x_rgb, rel, mascara)
    assert torch.equal(saida.attention[..., 2], torch.ones(R, M, dtype=torch.float64))


def test_vistas_identicas_dao_atencao_uniforme(fat, gerador):
    uma = torch.randn(R, M, 1, D, generator=gerador, dtype=torch.float64)
    x_rgb = uma.expand(R, M, N, D)
    rel = torch.zeros(R, M, N, 3, dtype=torch.float64)
    saida = fat(uma[:, :, 0], x_rgb, rel, torch.ones(R, M, N, dtype=torch.bool))
    torch.testing.assert_close(saida.attention, torch.full((R, M, N), 1.0 / N, dtype=torch.float64))


def _campo_semantico_ingenuo(a_fat, x_sem, p):
    fator = x_sem.shape[-1] // p.shape[-1]
    saida = torch.zeros(x_sem.shape[0], x_sem.shape[1], x_sem.shape[-1], dtype=x_sem.dtype)
    for r in range(x_sem.shape[0]):
        for m in range(x_sem.shape[1]):
            for n in range(x_sem.shape[2]):
                p_linha = torch.stack([p[r, m, n, c // fator] for c in range(x_sem.shape[-1])])
                saida[r, m] += a_fat[r, m, n] * (x_sem[r, m, n] + p_linha)
    return saida


def test_campo_semantico_igual_ao_laco(gerador):
    a_fat = torch.softmax(torch.randn(3, 4, N, generator=gerador, dtype=torch.float64), dim=-1)
    x_sem = torch.randn(3, 4, N, 4 * D, generator=gerador, dtype=torch.float64)
    p = torch.randn(3, 4, N, D, generator=gerador, dtype=torch.float64)
    torch.testing.assert_close(semantic_field(a_fat, x_sem, p), _campo_semantico_ingenuo(a_fat, x_sem, p), atol=1e-6, rtol=0)


def test_campo_semantico_selecao(gerador):
    a_fat = torch.zeros(2, 3, N, dtype=torch.float64)
    a_fat[..., 1] = 1.0
    x_sem = torch.randn(2, 3, N, 2 * D, generator=gerador, dtype=torch.float64)
    p = torch.randn(2, 3, N, D, generator=gerador, dtype=torch.float64)
    esperado = x_sem[:, :, 1] + p[:, :, 1].repeat_interleave(2, dim=-1)
    torch.testing.assert_close(semantic_field(a_fat, x_sem, p), esperado)


def test_campo_semantico_ponto_fixo_convexo(gerador):
    a_fat = torch.softmax(torch.randn(2, 3, N, generator=gerador, dtype=torch.float64), dim=-1)
    g = torch.randn(2 * D, generator=gerador, dtype=torch.float64)
    x_sem = g.expand(2, 3, N, 2 * D)
    saida = semantic_field(a_fat, x_sem, torch.zeros(2, 3, N, D, dtype=torch.float64))
    torch.testing.assert_close(saida, g.expand(2, 3, 2 * D))


def test_agregacao_no_raio_igual_ao_laco(gerador):
    a_rat = torch.softmax(torch.randn(3, M, generator=gerador, dtype=torch.float64), dim=-1)
    f_sem = torch.randn(3, M, 2 * D, generator=gerador, dtype=torch.float64)
    ingenuo = torch.stack([sum(a_rat[r, m] * f_sem[r, m] for m in range(M)) for r in range(3)])
    torch.testing.assert_close(aggregate_semantic(a_rat, f_sem), ingenuo, atol=1e-6, rtol=0)


def test_agregacao_no_raio_selecao(gerador):
    a_rat = torch.zeros(2, M, dtype=torch.float64)
    a_rat[:, 3] = 1.0
    f_sem = torch.randn(2, M, D, generator=gerador, dtype=torch.float64)
    torch.testing.assert_close(aggregate_semantic(a_rat, f_sem), f_sem[:, 3])


@pytest.mark.parametrize("escala", [1.0, 1e3])
def test_linhas_de_a_rat_somam_um(gerador, escala):
    torch.manual_seed(2)
    rat = RayAggregationTransformer(D, 9, 9).double()
    f_rgb = escala * torch.randn(1000, M, D, generator=gerador, dtype=torch.float64)
    coords = torch.randn(1000, M, 3, generator=gerador, dtype=torch.float64)
    direcao = torch.nn.functional.normalize(torch.randn(1000, 3, generator=gerador, dtype=torch.float64), dim=-1)
    _, a_rat = rat_aggregate(rat, f_rgb, coords, direcao, n_freqs=1)
    assert bool(torch.isfinite(a_rat).all())
    assert bool((a_rat >= 0).all())
    torch.testing.assert_close(a_rat.sum(dim=-1), torch.ones(1000, dtype=torch.float64), atol=1e-6, rtol=0)


def test_rat_equivariante_sem_codificacao(gerador):
    torch.manual_seed(3)
    rat = RayAggregationTransformer(D, 9, 9).double()
    f_rgb = torch.randn(2, M, D, generator=gerador, dtype=torch.float64)
    coords = torch.randn(2, M, 3, generator=gerador, dtype=torch.float64)
    direcao = torch.tensor([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]], dtype=torch.float64)
    perm = torch.randperm(M, generator=gerador)
    s2d, a_rat = rat_aggregate(rat, f_rgb, coords, direcao, 1, pe_enabled=False)
    s2d_p, a_rat_p = rat_aggregate(rat, f_rgb[:, perm], coords[:, perm], direcao, 1, pe_enabled=False)
    torch.testing.assert_close(s2d_p, s2d[:, perm])
    torch.testing.assert_close(a_rat_p, a_rat[:, perm])
    torch.testing.assert_close(render_color(torch.nn.Identity(), s2d_p), render_color(torch.nn.Identity(), s2d))


def test_ponto_unico_no_raio(gerador):
    rat = RayAggregationTransformer(D, 3, 3).double()
    _, a_rat = rat(
        torch.randn(4, 1, D, generator=gerador, dtype=torch.float64),
        torch.zeros(4, 1, 3, dtype=torch.float64),
        torch.zeros(4, 1, 3, dtype=torch.float64),
    )
    assert torch.equal(a_rat, torch.ones(4, 1, dtype=torch.float64))


def test_codificacao_posicional():
    x = torch.tensor([[0.25, -0.5, 1.0]], dtype=torch.float64)
    saida = positional_encoding(x, 2)
    assert saida.shape == (1, encoding_dim(2))
    assert torch.equal(saida[:, :3], x)
    assert positional_encoding(x, 0) is x


def _configuracao_raios(cena, config, n_raios_por_lado=4):
    cameras = [v.camera for v in cena.views]
    alvo = cena.test_views[0]
    referencias = select_reference_views(cameras, alvo, cena.train_views, config.n_ref_views)
    raios = generate_rays(cameras[alvo], pixel_centers(16, 16, 16 // n_raios_por_lado), cena.t_near, cena.t_far, dtype=torch.float64)
    return [cena.view(i).rgb for i in referencias], [cameras[i] for i in referencias], raios


def test_formatos_do_lote_renderizado(modelo_micro, cena_pequena, config_teste):
    imagens, cameras, raios = _configuracao_raios(cena_pequena, config_teste)
    feats = extract_features(modelo_micro.extractor, imagens)
    pilha = CameraStack.from_cameras(cameras, dtype=torch.float64)
    with torch.no_grad():
        saida = render_rays(modelo_micro.fields, raios, feats, pilha, config_teste.samples_per_ray)
    n_raios, m, n = len(raios), config_teste.samples_per_ray, config_teste.n_ref_views
    assert saida.color.shape == (n_raios, 3)
    assert saida.sem.shape == (n_raios, config_teste.d_sem)
    assert saida.attention.fat.shape == (n_raios * m, n)
    assert saida.attention.rat.shape == (n_raios, m)
    assert saida.point_sem.shape == (n_raios, m, config_teste.d_sem)
    assert bool((saida.color >= 0).all()) and bool((saida.color <= 1).all())


def test_blocos_iguais_ao_lote_inteiro(modelo_micro, cena_pequena, config_teste):
    imagens, cameras, raios = _configuracao_raios(cena_pequena, config_teste)
    feats = extract_features(modelo_micro.extractor, imagens)
    pilha = CameraStack.from_cameras(cameras, dtype=torch.float64)
    with torch.no_grad():
        inteiro = render_rays(modelo_micro.fields, raios, feats, pilha, 8)
        em_blocos = render_rays(modelo_micro.fields, raios, feats, pilha, 8, chunk=5)
        subconjunto = render_rays(modelo_micro.fields, raios.subset(slice(3, 7)), feats, pilha, 8)
    torch.testing.assert_close(em_blocos.color, inteiro.color)
    torch.testing.assert_close(em_blocos.sem, inteiro.sem)
    torch.testing.assert_close(subconjunto.sem, inteiro.sem[3:7])


def test_permutar_vistas_nao_muda_a_cor(modelo_micro, cena_pequena, config_teste):
    imagens, cameras, raios = _configuracao_raios(cena_pequena, config_teste)
    ordem = [2, 0, 1]
    with torch.no_grad():
        a = render_rays(
            modelo_micro.fields, raios, extract_features(modelo_micro.extractor, imagens),
            CameraStack.from_cameras(cameras, dtype=torch.float64), 8,
        )
        b = render_rays(
            modelo_micro.fields, raios, extract_features(modelo_micro.extractor, [imagens[i] for i in ordem]),
            CameraStack.from_cameras([cameras[i] for i in ordem], dtype=torch.float64), 8,
        )
    torch.testing.assert_close(a.color, b.color)
    torch.testing.assert_close(a.sem, b.sem)


def test_atencao_congelada_nao_muda_valores(modelo_micro, cena_pequena, config_teste):
    imagens, cameras, raios = _configuracao_raios(cena_pequena, config_teste)
    feats = extract_features(modelo_micro.extractor, imagens)
    pilha = CameraStack.from_cameras(cameras, dtype=torch.float64)
    livre = render_rays(modelo_micro.fields, raios, feats, pilha, 8)
    congelada = render_rays(modelo_micro.fields, raios, feats, pilha, 8, freeze_attention=True)
    torch.testing.assert_close(congelada.sem, livre.sem)

    # com a atenção congelada, a perda semântica não alcança f_q do FAT
    congelada.sem.sum().backward()
    grad = modelo_micro.fields.fat_blocks[0].f_q.weight.grad
    assert grad is None or bool((grad == 0).all())


def test_semantica_reutiliza_a_atencao_exportada(modelo_micro, cena_pequena, config_teste):
    imagens, cameras, raios = _configuracao_raios(cena_pequena, config_teste)
    with torch.no_grad():
        saida = render_rays(
            modelo_micro.fields, raios, extract_features(modelo_micro.extractor, imagens),
            CameraStack.from_cameras(cameras, dtype=torch.float64), 8,
        )
        pre_mlp = aggregate_semantic(saida.attention.rat, saida.point_sem)
        torch.testing.assert_close(modelo_micro.fields.sem_mlp(pre_mlp), saida.sem)


def test_d_sem_multiplo_de_d_rgb():
    with pytest.raises(ValueError):
        RadianceSemanticFields(d_rgb=8, d_sem=20)
