# tests/test_geometry.py

import numpy as np
import pytest
import torch

from src.models.camera import CameraModel
from src.utils.exceptions import GeometryError
from src.utils.geometry import (
    CameraStack,
    bilinear_sample,
    depth_to_sample_index,
    generate_rays,
    pixel_centers,
    project,
    relative_directions,
    sample_points,
    unproject,
)


@pytest.fixture
def camera():
    return CameraModel.look_at([2.0, -1.0, 0.3], [0.0, 0.0, -0.2], 14.0, 14.0, 8.0, 8.0, 16, 16)


def test_raios_unitarios_pelo_centro(camera):
    raios = generate_rays(camera, pixel_centers(16, 16), 0.1, 5.0, dtype=torch.float64)
    assert len(raios) == 256
    assert torch.allclose(raios.directions.norm(dim=-1), torch.ones(256, dtype=torch.float64))
    # o pixel central olha ao longo do eixo óptico
    central = generate_rays(camera, [[8.0, 8.0]], 0.1, 5.0, dtype=torch.float64)
    assert np.allclose(central.directions[0].numpy(), camera.forward)


def test_pixel_fora_da_imagem(camera):
    with pytest.raises(GeometryError):
        generate_rays(camera, [[17.0, 3.0]], 0.1, 5.0)


def test_intervalo_invalido(camera):
    with pytest.raises(GeometryError):
        generate_rays(camera, [[1.0, 1.0]], 5.0, 0.1)


def test_projetar_desprojetar(camera):
    gerador = torch.Generator().manual_seed(0)
    uv = torch.rand(50, 2, generator=gerador, dtype=torch.float64) * 16
    profundidade = 0.5 + 3 * torch.rand(50, generator=gerador, dtype=torch.float64)
    pontos = unproject(camera, uv, profundidade)
    uv_volta, z, valido = project(pontos, camera)
    assert bool(valido.all())
    assert torch.allclose(uv_volta, uv, atol=1e-6)
    assert bool((z > 0).all())


def test_ponto_atras_da_camera_invalido(camera):
    atras = torch.as_tensor(camera.center - 2.0 * camera.forward, dtype=torch.float64).unsqueeze(0)
    _, _, valido = project(atras, camera)
    assert not bool(valido[0])


def test_projecao_em_pilha_igual_a_individual(camera):
    outra = CameraModel.look_at([-2.0, 1.0, 0.0], [0.0, 0.0, 0.0], 14.0, 14.0, 8.0, 8.0, 16, 16)
    pilha = CameraStack.from_cameras([camera, outra], dtype=torch.float64)
    pontos = torch.tensor([[0.1, 0.2, -0.1], [0.0, 0.0, 0.3]], dtype=torch.float64)
    uv, _, _ = project(pontos, pilha)
    uv_b, _, _ = project(pontos, outra)
    assert torch.allclose(uv[1], uv_b)


def test_amostras_crescentes(camera):
    raios = generate_rays(camera, pixel_centers(16, 16, 4), 0.5, 4.0, dtype=torch.float64)
    for estratificado in (False, True):
        pontos = sample_points(raios, 8, stratified=estratificado, seed=3)
        assert pontos.ts.shape == (16, 8)
        assert bool((pontos.ts[:, 1:] > pontos.ts[:, :-1]).all())
        assert bool((pontos.ts > 0.5).all()) and bool((pontos.ts < 4.0).all())


def test_amostragem_estratificada_reprodutivel(camera):
    raios = generate_rays(camera, pixel_centers(16, 16, 4), 0.5, 4.0)
    a = sample_points(raios, 8, stratified=True, seed=11)
    b = sample_points(raios, 8, stratified=True, seed=11)
    assert torch.equal(a.ts, b.ts)


def test_pontos_medios_sem_estratificar(camera):
    raios = generate_rays(camera, [[8.0, 8.0]], 1.0, 2.0, dtype=torch.float64)
    pontos = sample_points(raios, 4, stratified=False)
    assert torch.allclose(pontos.ts[0], torch.tensor([1.125, 1.375, 1.625, 1.875], dtype=torch.float64))


def test_amostragem_bilinear_no_centro_da_celula():
    grade = torch.arange(2 * 3 * 4, dtype=torch.float64).reshape(2, 3, 4)
    i, j = 1, 2
    uv = torch.tensor([[(j + 0.5) * 4, (i + 0.5) * 4]], dtype=torch.float64)
    valores, valido = bilinear_sample(grade, uv, passo=4)
    assert bool(valido[0])
    assert torch.allclose(valores[0], grade[:, i, j])


def test_amostragem_bilinear_interpola():
    grade = torch.tensor([[[0.0, 2.0]]], dtype=torch.float64)  # 1 x 1 x 2
    valores, _ = bilinear_sample(grade, torch.tensor([[1.0, 0.5]], dtype=torch.float64))
    assert valores[0, 0].item() == pytest.approx(1.0)


def test_amostragem_fora_da_grade():
    grade = torch.ones(3, 4, 4, dtype=torch.float64)
    valores, valido = bilinear_sample(grade, torch.tensor([[-3.0, 1.0], [20.0, 2.0]], dtype=torch.float64))
    assert not bool(valido.any())
    assert bool((valores == 0).all())


def test_direcoes_relativas_nulas_na_propria_camera(camera):
    pilha = CameraStack.from_cameras([camera], dtype=torch.float64)
    raios = generate_rays(camera, [[5.0, 9.0]], 0.5, 4.0, dtype=torch.float64)
    pontos = sample_points(raios, 3)
    delta = relative_directions(pontos.positions, raios.directions, pilha)
    assert delta.shape == (1, 3, 1, 3)
    assert torch.allclose(delta, torch.zeros_like(delta), atol=1e-12)


def test_indice_de_profundidade_com_empate():
    ts = torch.tensor([[1.0, 2.0, 3.0, 4.0]], dtype=torch.float64)
    resultado = depth_to_sample_index(ts, torch.tensor([2.5], dtype=torch.float64), 0.5, 4.5)
    assert resultado.indices.tolist() == [1]
    assert resultado.n_clamped == 0


def test_indice_de_profundidade_preso_ao_limite():
    ts = torch.tensor([[1.0, 2.0, 3.0, 4.0]] * 2, dtype=torch.float64)
    resultado = depth_to_sample_index(ts, torch.tensor([0.1, 9.0], dtype=torch.float64), 0.5, 4.5)
    assert resultado.indices.tolist() == [0, 3]
    assert resultado.n_clamped == 2
