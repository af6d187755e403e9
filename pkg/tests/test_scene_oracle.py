# tests/test_scene_oracle.py

import numpy as np
import pytest

from src.models.camera import CameraModel
from src.models.scene import Scene, SceneConfig
from src.utils.exceptions import ConfigError, GeometryError, SceneGenerationError
from src.utils.scene_oracle import (
    generate_scene,
    intersect_scene,
    pixel_rays,
    render_view_oracle,
    sample_camera_ring,
    split_views,
)


def test_cena_deterministica(config_teste):
    a = generate_scene(config_teste.scene_config(5))
    b = generate_scene(config_teste.scene_config(5))
    assert a.boxes == b.boxes
    assert generate_scene(config_teste.scene_config(6)).boxes != a.boxes


def test_caixas_dentro_da_sala_e_sem_sobreposicao(config_teste):
    cena = generate_scene(config_teste.scene_config(1))
    assert [c.instance_id for c in cena.boxes] == list(range(1, config_teste.n_objects + 1))
    for caixa in cena.boxes:
        assert np.all(np.asarray(caixa.min_corner) > cena.room_min)
        assert np.all(np.asarray(caixa.max_corner) < cena.room_max)
        assert caixa.class_id != 0
    a, b = cena.boxes
    separadas = any(
        a.max_corner[e] <= b.min_corner[e] or b.max_corner[e] <= a.min_corner[e] for e in range(3)
    )
    assert separadas


def test_objetos_demais_levantam_erro():
    config = SceneConfig(
        room_extent=(2.0, 2.0, 3.0), n_objects=50, class_palette=[(0, (0.5, 0.5, 0.5)), (1, (1.0, 0.0, 0.0))],
        image_size=(16, 16), seed=0,
    )
    with pytest.raises(SceneGenerationError):
        generate_scene(config)


def test_paleta_sem_fundo():
    with pytest.raises(ConfigError):
        SceneConfig(room_extent=(4.0, 4.0, 3.0), n_objects=1, class_palette=[(1, (1.0, 0.0, 0.0))], image_size=(16, 16))


def test_serializacao_da_cena(config_teste):
    cena = generate_scene(config_teste.scene_config(2))
    assert Scene.from_dict(cena.to_dict()) == cena


def test_vista_do_oraculo_consistente(cena_pequena):
    vista = cena_pequena.view(0)
    altura, largura = cena_pequena.image_size
    assert vista.rgb.shape == (altura, largura, 3)
    assert np.all(np.isfinite(vista.depth)) and np.all(vista.depth > 0)
    assert vista.rgb.min() >= 0.0 and vista.rgb.max() <= 1.0
    # fundo (classe 0) e instância 0 coincidem
    assert np.array_equal(vista.semantic == 0, vista.instance == 0)


def test_profundidade_do_fundo_acerta_as_paredes(cena_pequena):
    vista = cena_pequena.view(1)
    cena = cena_pequena.scene
    altura, largura = cena_pequena.image_size
    origens, direcoes = pixel_rays(vista.camera, altura, largura)
    pontos = origens + vista.depth.reshape(-1, 1) * direcoes
    fundo = vista.semantic.reshape(-1) == 0
    razao = np.abs(pontos[fundo]) / cena.room_max
    assert np.allclose(razao.max(axis=-1), 1.0, atol=1e-9)


def test_intersecao_de_caixa_conhecida():
    config = SceneConfig(
        room_extent=(10.0, 10.0, 4.0), n_objects=0, class_palette=[(0, (0.5, 0.5, 0.5))], image_size=(8, 8)
    )
    cena = Scene(config=config)
    origem = np.array([[0.0, 0.0, 0.0]])
    direcao = np.array([[1.0, 0.0, 0.0]])
    t, normal, classe, instancia, _ = intersect_scene(cena, origem, direcao)
    assert t[0] == pytest.approx(5.0)
    assert normal[0].tolist() == [-1.0, 0.0, 0.0]
    assert classe[0] == 0 and instancia[0] == 0


def test_anel_de_cameras(cena_pequena):
    cena = cena_pequena.scene
    cameras = sample_camera_ring(cena, 8, seed=3)
    assert len(cameras) == 8
    for camera in cameras:
        assert np.all(camera.center > cena.room_min) and np.all(camera.center < cena.room_max)
        para_alvo = cena.centroid - camera.center
        para_alvo /= np.linalg.norm(para_alvo)
        assert float(camera.forward @ para_alvo) == pytest.approx(1.0, abs=1e-9)


def test_anel_deterministico(cena_pequena):
    a = sample_camera_ring(cena_pequena.scene, 4, seed=9)
    b = sample_camera_ring(cena_pequena.scene, 4, seed=9)
    for ca, cb in zip(a, b):
        assert np.array_equal(ca.cam_to_world, cb.cam_to_world)


def test_divisao_treino_teste():
    treino, teste = split_views(24, 4, seed=1)
    assert len(teste) == 4
    assert sorted(treino + teste) == list(range(24))
    assert split_views(24, 4, seed=1) == (treino, teste)


def test_camera_nao_ortonormal():
    pose = np.eye(4)
    pose[0, 0] = 2.0
    with pytest.raises(GeometryError):
        CameraModel(fx=10.0, fy=10.0, cx=4.0, cy=4.0, cam_to_world=pose)


def test_camera_ida_e_volta():
    camera = CameraModel.look_at([1.0, 2.0, 0.5], [0.0, 0.0, 0.0], 20.0, 20.0, 8.0, 8.0, 16, 16)
    copia = CameraModel.from_dict(camera.to_dict())
    assert np.allclose(copia.cam_to_world, camera.cam_to_world)
    assert np.allclose(camera.world_to_cam @ camera.cam_to_world, np.eye(4))
