# /src/config.py

"""
Configuração centralizada do GP-NeRF.

Toda execução é descrita por um `RunConfig` plano: cada campo tem valor padrão,
chaves desconhecidas são rejeitadas e o snapshot resolvido vai junto de todo
checkpoint, relatório e dataset.

Ordem de resolução: perfil (`config_by_name`) -> arquivo de configuração ->
flags da linha de comando -> variável de ambiente GPNERF_SEED.

Exemplo de uso:
    from src.config import load_run_config
    config = load_run_config("experimentos/toy.cfg", perfil="desk", sobrescritas={"steps": "200"})
"""

import dataclasses
import io
import logging
import os
from dataclasses import dataclass, fields
from typing import Any, Dict, Mapping, Optional, Tuple

from dotenv import dotenv_values

from src.utils.exceptions import ConfigError

logger = logging.getLogger(__name__)

SEED_ENV = "GPNERF_SEED"
PROFILE_ENV = "GPNERF_PROFILE"

# Cores base da paleta; a classe 0 (paredes/piso/teto) é sempre a primeira.
PALETA_BASE = (
    (0.60, 0.60, 0.60),
    (0.85, 0.20, 0.20),
    (0.20, 0.70, 0.25),
    (0.20, 0.35, 0.85),
    (0.90, 0.80, 0.15),
    (0.75, 0.25, 0.80),
    (0.15, 0.80, 0.80),
    (0.95, 0.55, 0.15),
    (0.45, 0.30, 0.15),
)


def str_to_bool(value, default=False):
    """Converte string de configuração/ambiente para booleano."""
    if value is None:
        return default
    if isinstance(value, bool):
        return value
    return str(value).strip().lower() in ("true", "1", "yes", "on", "sim")


def parse_int_env(var, default):
    """
    Tenta converter a variável de ambiente para inteiro, ignorando comentários após o valor.
    Exemplo: '7  # semente fixa' -> 7
    """
    val = os.getenv(var)
    if val is None:
        return default
    try:
        return int(val.split()[0])
    except (ValueError, IndexError):
        logger.warning(f"Valor inválido em {var}: {val!r}; usando {default}")
        return default


def parse_str_env(var, default):
    """
    Pega a variável de ambiente como string, ignorando comentários após o valor.
    Exemplo: 'desk  # perfil de bancada' -> 'desk'
    """
    val = os.getenv(var)
    if val is None:
        return default
    return val.split("#")[0].strip()


@dataclass
class RunConfig:
    """
    Superconjunto de SceneConfig + TrainConfig + LossWeights + dimensões do modelo.

    Os padrões de treino são os valores de escala completa (Adam com taxas
    5e-3 / 1e-5 / 5e-5, 512 raios, 64 pontos, 10 vistas de referência);
    o perfil `desk` ajusta tudo para rodar em CPU.
    """

    # -------------------- Cena --------------------
    room_extent: Tuple[float, float, float] = (8.0, 8.0, 3.0)
    n_objects: int = 4
    n_classes: int = 5
    image_height: int = 64
    image_width: int = 64
    fov_degrees: float = 60.0
    t_near: float = 0.1
    t_far: float = 12.0
    n_scenes: int = 4
    n_views: int = 24
    n_test_views: int = 4
    camera_jitter: float = 0.05

    # -------------------- Modelo --------------------
    d_rgb: int = 32
    d_sem: int = 128
    encoder_channels: Tuple[int, int, int, int] = (16, 32, 64, 128)
    transformer_depth: int = 1
    n_heads: int = 1
    pe_frequencies: int = 6

    # -------------------- Treino --------------------
    mode: str = "generalization"
    instance_mode: bool = False
    steps: int = 200_000
    rays_per_step: int = 512
    samples_per_ray: int = 64
    n_ref_views: int = 10
    stratified: bool = True
    lr_extractor: float = 5e-3
    lr_transformer: float = 1e-5
    lr_head: float = 5e-5
    lr_decay: float = 0.999995
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    # -------------------- Perdas --------------------
    alpha_rgb: float = 1.0
    alpha_sem: float = 1.0
    alpha_sd: float = 0.1
    alpha_dg: float = 0.1
    n_p: int = 2
    rendered_pixel_weight: float = 2.0
    sem_loss_rendered_only: bool = False
    use_semantic_distill: bool = True
    use_depth_guided: bool = True
    use_gradient_block: bool = True
    freeze_shared_attention: bool = False

    # -------------------- Execução --------------------
    seed: int = 0
    chunk_rays: int = 1024
    checkpoint_every: int = 1000
    log_every: int = 50
    ablation_repeats: int = 3
    exclude_background_miou: bool = False
    dataset_dir: str = "data/toy"
    output_dir: str = "runs/default"
    log_dir: str = "logs"

    def __post_init__(self):
        self.validate()

    # ---------------------------------------------------------------
    def validate(self):
        """Valida invariantes que não dependem de outros módulos."""
        if self.n_objects < 0:
            raise ConfigError("n_objects deve ser >= 0")
        if not 2 <= self.n_classes <= len(PALETA_BASE):
            raise ConfigError(
                f"n_classes deve estar entre 2 e {len(PALETA_BASE)} (recebido {self.n_classes})"
            )
        if self.image_height < 8 or self.image_width < 8:
            raise ConfigError("image_height e image_width devem ser >= 8")
        if not 0 < self.t_near < self.t_far:
            raise ConfigError("é necessário 0 < t_near < t_far")
        if len(self.room_extent) != 3 or min(self.room_extent) <= 0:
            raise ConfigError("room_extent deve ter 3 componentes positivas")
        if self.d_sem % 4 != 0 or self.d_sem % self.d_rgb != 0:
            raise ConfigError("d_sem deve ser múltiplo de 4 e de d_rgb")
        if self.d_rgb % self.n_heads != 0:
            raise ConfigError("d_rgb deve ser divisível por n_heads")
        if len(self.encoder_channels) != 4:
            raise ConfigError("encoder_channels deve ter 4 estágios")
        if self.mode not in ("generalization", "finetune"):
            raise ConfigError(f"mode inválido: {self.mode}")
        if self.instance_mode and self.mode != "finetune":
            raise ConfigError("instance_mode só é permitido em finetune")
        if self.steps < 1 or self.rays_per_step < 1 or self.samples_per_ray < 1:
            raise ConfigError("steps, rays_per_step e samples_per_ray devem ser >= 1")
        if self.n_ref_views < 1:
            raise ConfigError("n_ref_views deve ser >= 1")
        if min(self.lr_extractor, self.lr_transformer, self.lr_head) <= 0:
            raise ConfigError("taxas de aprendizado devem ser positivas")
        if not 0 < self.lr_decay <= 1:
            raise ConfigError("lr_decay deve estar em (0, 1]")
        if min(self.alpha_rgb, self.alpha_sem, self.alpha_sd, self.alpha_dg) < 0:
            raise ConfigError("pesos das perdas devem ser não negativos")
        if self.n_views < 1 or self.n_scenes < 1:
            raise ConfigError("n_views e n_scenes devem ser >= 1")
        if not 0 <= self.n_test_views < self.n_views:
            raise ConfigError("n_test_views deve ser menor que n_views")

    # ---------------------------------------------------------------
    def class_palette(self):
        """Lista de (class_id, cor_base) com a classe 0 reservada ao fundo."""
        return [(i, PALETA_BASE[i]) for i in range(self.n_classes)]

    def scene_config(self, seed=None):
        from src.models.scene import SceneConfig

        return SceneConfig(
            room_extent=tuple(self.room_extent),
            n_objects=self.n_objects,
            class_palette=self.class_palette(),
            image_size=(self.image_height, self.image_width),
            seed=self.seed if seed is None else seed,
            fov_degrees=self.fov_degrees,
            t_near=self.t_near,
            t_far=self.t_far,
        )

    def loss_weights(self):
        from src.utils.losses import LossWeights

        return LossWeights(self.alpha_rgb, self.alpha_sem, self.alpha_sd, self.alpha_dg)

    def train_config(self):
        from src.utils.trainer import TrainConfig

        return TrainConfig.from_run_config(self)

    def to_dict(self) -> Dict[str, Any]:
        dados = dataclasses.asdict(self)
        for chave, valor in dados.items():
            if isinstance(valor, tuple):
                dados[chave] = list(valor)
        return dados

    @classmethod
    def from_dict(cls, dados: Mapping[str, Any]) -> "RunConfig":
        return cls(**_coagir_valores(dict(dados)))

    def replace(self, **alteracoes) -> "RunConfig":
        return dataclasses.replace(self, **_coagir_valores(alteracoes))


# ========== PERFIS ==========

def _perfil_desk() -> Dict[str, Any]:
    """Perfil de bancada: 64x64, poucas cenas, roda em CPU em minutos."""
    return dict(
        n_scenes=2,
        n_views=20,
        steps=5000,
        rays_per_step=256,
        samples_per_ray=64,
        n_ref_views=10,
        lr_extractor=1e-3,
        lr_transformer=5e-4,
        lr_head=1e-3,
        lr_decay=0.9995,
        checkpoint_every=500,
    )


def _perfil_full() -> Dict[str, Any]:
    """Valores de escala completa (200k passos de generalização)."""
    return dict(image_height=240, image_width=320, n_scenes=8, n_views=80)


def _perfil_testing() -> Dict[str, Any]:
    """Dimensões mínimas para testes e verificação de gradiente."""
    return dict(
        n_objects=2,
        n_classes=3,
        image_height=16,
        image_width=16,
        n_scenes=1,
        n_views=6,
        n_test_views=1,
        d_rgb=8,
        d_sem=32,
        encoder_channels=(4, 8, 8, 8),
        pe_frequencies=2,
        steps=4,
        rays_per_step=8,
        samples_per_ray=8,
        n_ref_views=3,
        checkpoint_every=2,
        log_every=1,
        chunk_rays=64,
    )


config_by_name = dict(
    desk=_perfil_desk,
    full=_perfil_full,
    testing=_perfil_testing,
)


# ========== LEITURA E COERÇÃO ==========

_CAMPOS = {f.name: f for f in fields(RunConfig)}


def _coagir(nome: str, valor: Any) -> Any:
    campo = _CAMPOS[nome]
    padrao = campo.default
    if not isinstance(valor, str):
        if isinstance(padrao, tuple):
            return tuple(valor)
        return valor
    texto = valor.split("#")[0].strip()
    try:
        if isinstance(padrao, bool):
            return str_to_bool(texto)
        if isinstance(padrao, int):
            return int(texto.replace("_", ""))
        if isinstance(padrao, float):
            return float(texto)
        if isinstance(padrao, tuple):
            itens = [p.strip() for p in texto.strip("()[] ").split(",") if p.strip()]
            tipo = type(padrao[0])
            return tuple(tipo(p) for p in itens)
    except ValueError as e:
        raise ConfigError(f"Valor inválido para {nome}: {valor!r} ({e})")
    return texto.strip("\"'")


def _coagir_valores(valores: Dict[str, Any]) -> Dict[str, Any]:
    desconhecidas = sorted(set(valores) - set(_CAMPOS))
    if desconhecidas:
        raise ConfigError(f"Chaves de configuração desconhecidas: {', '.join(desconhecidas)}")
    return {nome: _coagir(nome, valor) for nome, valor in valores.items()}


def read_config_file(caminho) -> Dict[str, str]:
    """
    Lê um arquivo `chave = valor` plano. Linhas de seção no estilo TOML
    (`[treino]`) são aceitas e ignoradas na resolução das chaves.
    """
    try:
        with open(caminho, encoding="utf-8") as f:
            linhas = f.readlines()
    except OSError as e:
        raise ConfigError(f"Não foi possível ler o arquivo de configuração {caminho}: {e}")
    filtradas = [
        linha for linha in linhas
        if not (linha.strip().startswith("[") and linha.strip().endswith("]"))
    ]
    valores = dotenv_values(stream=io.StringIO("".join(filtradas)))
    return {chave.strip(): ("" if valor is None else valor) for chave, valor in valores.items()}


def load_run_config(
    caminho: Optional[str] = None,
    perfil: Optional[str] = None,
    sobrescritas: Optional[Mapping[str, Any]] = None,
) -> RunConfig:
    """Resolve a configuração efetiva de uma execução."""
    nome_perfil = perfil or parse_str_env(PROFILE_ENV, "desk")
    if nome_perfil not in config_by_name:
        raise ConfigError(f"Perfil desconhecido: {nome_perfil}")

    valores: Dict[str, Any] = dict(config_by_name[nome_perfil]())
    if caminho:
        valores.update(read_config_file(caminho))
    if sobrescritas:
        valores.update({k: v for k, v in sobrescritas.items() if v is not None})

    semente = parse_int_env(SEED_ENV, None)
    if semente is not None:
        valores["seed"] = semente
        logger.info(f"Semente sobrescrita por {SEED_ENV}={semente}")

    return RunConfig(**_coagir_valores(valores))


def parse_overrides(pares) -> Dict[str, str]:
    """Converte pares `chave=valor` da linha de comando em dicionário."""
    resultado: Dict[str, str] = {}
    for par in pares or ():
        if "=" not in par:
            raise ConfigError(f"Sobrescrita inválida (use chave=valor): {par}")
        chave, valor = par.split("=", 1)
        resultado[chave.strip()] = valor.strip()
    return resultado


