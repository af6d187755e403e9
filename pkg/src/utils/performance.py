# /src/utils/performance.py

"""Medição de tempo e memória das etapas pesadas (renderização, avaliação, treino)."""

import logging
import time
from functools import wraps

import psutil

logger = logging.getLogger(__name__)

LIMITE_LENTO_S = 1.0


def measure_performance(f=None, *, limite=LIMITE_LENTO_S):
    """Decorator para medir performance de funções; avisa acima de `limite` segundos."""

    def decorator(funcao):
        @wraps(funcao)
        def wrapper(*args, **kwargs):
            start_time = time.perf_counter()
            result = funcao(*args, **kwargs)
            execution_time = time.perf_counter() - start_time
            if execution_time > limite:
                logger.warning(f"Função {funcao.__name__} demorou {execution_time:.2f}s para executar")
            return result

        return wrapper

    if f is not None:
        return decorator(f)
    return decorator


def memory_usage_mb() -> float:
    """Memória residente (RSS) do processo atual em MB."""
    return psutil.Process().memory_info().rss / (1024 * 1024)


class StepTimer:
    """Cronômetro simples de passos de treino (média móvel por janela de log)."""

    def __init__(self):
        self._inicio = time.perf_counter()
        self._passos = 0

    def tick(self):
        self._passos += 1

    def reset(self) -> float:
        """Devolve segundos por passo desde o último reset."""
        decorrido = time.perf_counter() - self._inicio
        media = decorrido / self._passos if self._passos else 0.0
        self._inicio = time.perf_counter()
        self._passos = 0
        return media
