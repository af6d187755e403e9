# /src/main.py

import json
import logging
import os
import sys
from logging.handlers import RotatingFileHandler
from pathlib import Path

# Ajuste o sys.path ANTES dos imports locais do projeto:
sys.path.insert(0, os.path.abspath(os.path.dirname(os.path.dirname(__file__))))

import click
from dotenv import load_dotenv

# Carrega variáveis de ambiente ANTES de outros imports
load_dotenv()

from src.config import load_run_config, parse_overrides, parse_str_env
from src.utils.exceptions import ConfigError, DatasetError, GPNeRFError, GradcheckFailure

logger = logging.getLogger(__name__)

ARQUIVO_LOG = "gpnerf.log"
LOG_LEVEL_ENV = "GPNERF_LOG_LEVEL"
FORMATO_LOG = "%(asctime)s %(levelname)s: %(message)s [in %(pathname)s:%(lineno)d]"


def configure_logging(log_dir="logs", level=None):
    """Arquivo rotativo em `log_dir/gpnerf.log` mais saída no terminal."""
    nivel = getattr(logging, (level or parse_str_env(LOG_LEVEL_ENV, "INFO")).upper(), logging.INFO)
    raiz = logging.getLogger("src")
    for handler in list(raiz.handlers):
        if getattr(handler, "_gpnerf", False):
            raiz.removeHandler(handler)
            handler.close()

    os.makedirs(log_dir, exist_ok=True)
    file_handler = RotatingFileHandler(
        os.path.join(log_dir, ARQUIVO_LOG), maxBytes=10 * 1024 * 1024, backupCount=10
    )
    file_handler.setFormatter(logging.Formatter(FORMATO_LOG))
    stream_handler = logging.StreamHandler()
    stream_handler.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    for handler in (file_handler, stream_handler):
        handler._gpnerf = True
        handler.setLevel(nivel)
        raiz.addHandler(handler)
    raiz.setLevel(nivel)
    raiz.info("Inicialização do GP-NeRF")
    return raiz


class GPNeRFGroup(click.Group):
    """Grupo que traduz exceções em códigos de saída: 0 ok, 1 uso, 2 execução, 3 gradcheck."""

    def main(self, args=None, prog_name=None, complete_var=None, standalone_mode=True, **extra):
        try:
            resultado = super().main(args, prog_name, complete_var, standalone_mode=False, **extra)
        except click.exceptions.Abort:
            click.echo("Abortado.", err=True)
            sys.exit(1)
        except click.UsageError as e:
            e.show()
            sys.exit(1)
        except click.ClickException as e:
            e.show()
            sys.exit(2)
        except GPNeRFError as e:
            logger.error(f"{type(e).__name__}: {e}", exc_info=e.exit_code == 2)
            click.echo(f"Erro: {e}", err=True)
            sys.exit(e.exit_code)
        except Exception as e:
            logger.error(f"Erro inesperado: {e}", exc_info=True)
            click.echo(f"Erro inesperado: {e}", err=True)
            sys.exit(2)
        sys.exit(resultado if isinstance(resultado, int) else 0)


def opcoes_config(funcao):
    """--config, --profile e --set (repetível) em todos os comandos que resolvem um RunConfig."""
    funcao = click.option("--set", "sobrescritas", multiple=True, metavar="CHAVE=VALOR", help="Sobrescreve um campo do RunConfig.")(funcao)
    funcao = click.option("--profile", "perfil", default=None, help="Perfil base: desk, full ou testing.")(funcao)
    funcao = click.option("--config", "arquivo", type=click.Path(dir_okay=False), default=None, help="Arquivo chave = valor.")(funcao)
    return funcao


def resolver_config(arquivo, perfil, sobrescritas, **flags):
    valores = parse_overrides(sobrescritas)
    valores.update({chave: valor for chave, valor in flags.items() if valor is not None})
    config = load_run_config(arquivo, perfil, valores)
    logger.debug(f"Configuração efetiva: {config.to_dict()}")
    return config


def _carregar_modelo(checkpoint):
    from src.utils.checkpoint import load_checkpoint, restore_model

    conteudo = load_checkpoint(checkpoint)
    modelo, config = restore_model(conteudo)
    return modelo, config, conteudo.meta


def _escolher_cena(dataset, cena):
    if cena is None:
        return dataset.scenes[0]
    for candidata in dataset.scenes:
        if candidata.name == cena:
            return candidata
    if str(cena).isdigit() and int(cena) < len(dataset.scenes):
        return dataset.scenes[int(cena)]
    raise DatasetError(f"Cena não encontrada: {cena}")


@click.group(cls=GPNeRFGroup)
@click.option("--log-dir", default=lambda: parse_str_env("GPNERF_LOG_DIR", "logs"), show_default="logs")
@click.option("--log-level", default=None, help="DEBUG, INFO, WARNING (padrão: GPNERF_LOG_LEVEL ou INFO).")
def cli(log_dir, log_level):
    """GP-NeRF em escala de bancada: dataset sintético, treino, renderização e avaliação."""
    configure_logging(log_dir, log_level)


@cli.command()
@opcoes_config
@click.option("--scenes", "n_scenes", type=int, default=None)
@click.option("--views", "n_views", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", "saida", default=None, help="Raiz do dataset (padrão: dataset_dir).")
@click.option("--force", is_flag=True, help="Sobrescreve um dataset existente.")
def generate(arquivo, perfil, sobrescritas, n_scenes, n_views, seed, saida, force):
    """Gera cenas procedurais com RGB, profundidade, semântica e instâncias."""
    from src.utils.dataset_io import build_dataset, save_dataset

    config = resolver_config(arquivo, perfil, sobrescritas, n_scenes=n_scenes, n_views=n_views, seed=seed)
    dataset = build_dataset(config)
    caminho = save_dataset(dataset, saida or config.dataset_dir, force=force)
    click.echo(json.dumps({"path": str(caminho), **dataset.summary()}, indent=2))


@cli.command()
@opcoes_config
@click.option("--dataset", "pasta_dataset", default=None, help="Raiz do dataset (padrão: dataset_dir).")
@click.option("--out", "saida", default=None, help="Diretório de checkpoint e log (padrão: output_dir).")
@click.option("--steps", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--resume", type=click.Path(dir_okay=False), default=None, help="Checkpoint para retomar.")
def train(arquivo, perfil, sobrescritas, pasta_dataset, saida, steps, seed, resume):
    """Treino de generalização sobre todas as cenas do dataset."""
    from src.utils.dataset_io import load_dataset
    from src.utils.trainer import train as treinar

    config = resolver_config(arquivo, perfil, sobrescritas, steps=steps, seed=seed)
    dataset = load_dataset(pasta_dataset or config.dataset_dir)
    resultado = treinar(dataset, config, saida or config.output_dir, resume=resume)
    click.echo(f"Treino concluído no passo {resultado.step}; checkpoint: {resultado.checkpoint_path}")


@cli.command()
@opcoes_config
@click.option("--checkpoint", required=True, type=click.Path(dir_okay=False))
@click.option("--dataset", "pasta_dataset", default=None)
@click.option("--scene", "cena", default=None, help="Nome ou índice da cena (padrão: a primeira).")
@click.option("--out", "saida", default=None)
@click.option("--steps", type=int, default=None)
@click.option("--instance", is_flag=True, help="Cabeça de instâncias (K+1 saídas) e AP75 na avaliação.")
def finetune(arquivo, perfil, sobrescritas, checkpoint, pasta_dataset, cena, saida, steps, instance):
    """Ajuste por cena a partir de um checkpoint de generalização."""
    from src.utils.dataset_io import load_dataset
    from src.utils.trainer import finetune as ajustar

    config = resolver_config(
        arquivo, perfil, sobrescritas, steps=steps, mode="finetune", instance_mode=instance or None
    )
    dataset = load_dataset(pasta_dataset or config.dataset_dir)
    resultado = ajustar(checkpoint, _escolher_cena(dataset, cena), config, saida or config.output_dir)
    click.echo(f"Ajuste concluído no passo {resultado.step}; checkpoint: {resultado.checkpoint_path}")


@cli.command()
@click.option("--checkpoint", required=True, type=click.Path(dir_okay=False))
@click.option("--dataset", "pasta_dataset", required=True)
@click.option("--scene", "cena", default=None)
@click.option("--views", "vistas", default="test", show_default=True, help="'test', 'all' ou lista '0,3,5'.")
@click.option("--out", "saida", default="renders", show_default=True)
@click.option("--set", "sobrescritas", multiple=True, metavar="CHAVE=VALOR")
def render(checkpoint, pasta_dataset, cena, vistas, saida, sobrescritas):
    """Renderiza vistas: RGB, rótulos, PCA das características e mapa de erro."""
    from src.utils.dataset_io import load_dataset
    from src.utils.evaluator import export_view_images, render_scene_view
    from src.utils.validators import parse_view_ids

    modelo, config, _ = _carregar_modelo(checkpoint)
    if sobrescritas:
        config = config.replace(**parse_overrides(sobrescritas))
    escolhida = _escolher_cena(load_dataset(pasta_dataset), cena)
    try:
        indices = parse_view_ids(vistas, len(escolhida.views), escolhida.test_views)
    except ValueError as e:
        raise click.BadParameter(str(e), param_hint="--views")

    modelo.eval()
    gerados = []
    for indice in indices:
        renderizada = render_scene_view(modelo, escolhida, indice, config)
        gerados += export_view_images(
            renderizada, escolhida.view(indice), config.class_palette(), saida, f"{escolhida.name}_{indice:04d}"
        )
    click.echo(f"{len(gerados)} imagem(ns) gravada(s) em {saida}")


@cli.command()
@click.option("--checkpoint", required=True, type=click.Path(dir_okay=False))
@click.option("--dataset", "pasta_dataset", required=True)
@click.option("--out", "saida", default="eval_report.json", show_default=True)
@click.option("--images", "pasta_imagens", default=None, help="Também exporta as imagens de cada vista.")
@click.option("--set", "sobrescritas", multiple=True, metavar="CHAVE=VALOR")
def evaluate(checkpoint, pasta_dataset, saida, pasta_imagens, sobrescritas):
    """Avalia todas as vistas de teste e grava o relatório JSON."""
    from src.utils.dataset_io import load_dataset
    from src.utils.evaluator import evaluate_model

    modelo, config, meta = _carregar_modelo(checkpoint)
    if sobrescritas:
        config = config.replace(**parse_overrides(sobrescritas))
    dataset = load_dataset(pasta_dataset)
    instancia = bool(meta.get("instance_mode", False))
    if instancia and meta.get("scene"):
        dataset.scenes = [_escolher_cena(dataset, meta["scene"])]
    relatorio = evaluate_model(modelo, dataset, config, instance_mode=instancia, pasta_imagens=pasta_imagens)
    relatorio.save(saida)
    click.echo(relatorio.summary_table())


@cli.command()
@click.option("--check", "nomes", multiple=True, help="Verificação específica (repetível); padrão: todas.")
@click.option("--seed", type=int, default=0, show_default=True)
def gradcheck(nomes, seed):
    """Compara gradientes automáticos com diferenças centrais em micrografos."""
    from src.utils.gradcheck import CHECKS, run_gradcheck

    desconhecidos = [n for n in nomes if n not in CHECKS]
    if desconhecidos:
        raise click.BadParameter(f"{', '.join(desconhecidos)} (disponíveis: {', '.join(CHECKS)})", param_hint="--check")
    resultados = run_gradcheck(nomes or None, semente=seed)
    for r in resultados:
        estado = "ok" if r.passed else "FALHOU"
        click.echo(f"{r.name:<18}{estado:<8}{r.max_rel_error:>10.2e}{r.n_entries:>6}  {r.message}")
    falhas = [r.name for r in resultados if not r.passed]
    if falhas:
        raise GradcheckFailure(falhas)


@cli.command()
@opcoes_config
@click.option("--dataset", "pasta_dataset", default=None)
@click.option("--out", "saida", default=None, help="Diretório das execuções (padrão: output_dir/ablation).")
@click.option("--repeats", type=int, default=None)
def ablation(arquivo, perfil, sobrescritas, pasta_dataset, saida, repeats):
    """Grade de ablação: baseline, L_SD sem/com bloqueio e L_SD + L_DG."""
    from src.utils.ablation import run_ablation
    from src.utils.dataset_io import load_dataset

    config = resolver_config(arquivo, perfil, sobrescritas, ablation_repeats=repeats)
    if config.ablation_repeats < 1:
        raise ConfigError("ablation_repeats deve ser >= 1")
    dataset = load_dataset(pasta_dataset or config.dataset_dir)
    resumo = run_ablation(dataset, config, saida or str(Path(config.output_dir) / "ablation"))
    click.echo(json.dumps({"means": resumo.means, "checks": resumo.checks}, indent=2))


if __name__ == "__main__":
    cli()
