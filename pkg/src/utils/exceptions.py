# /src/utils/exceptions.py

"""
Exceções do domínio GP-NeRF.

O código de biblioteca apenas levanta estas exceções; quem decide o código de
saída e o registro em log é a linha de comando (`src/main.py`).
"""


class GPNeRFError(Exception):
    """Erro base do projeto."""

    exit_code = 2


class ConfigError(GPNeRFError):
    """Configuração inválida (chave desconhecida, valor fora do domínio)."""

    exit_code = 1


class SceneGenerationError(GPNeRFError):
    """Não foi possível posicionar os objetos dentro da sala."""


class DatasetError(GPNeRFError):
    """Arquivo do dataset ausente ou corrompido."""

    def __init__(self, mensagem, caminho=None, campo=None):
        self.caminho = str(caminho) if caminho is not None else None
        self.campo = campo
        detalhes = []
        if self.caminho:
            detalhes.append(f"arquivo={self.caminho}")
        if campo:
            detalhes.append(f"campo={campo}")
        sufixo = f" ({', '.join(detalhes)})" if detalhes else ""
        super().__init__(f"{mensagem}{sufixo}")


class GeometryError(GPNeRFError):
    """Entrada geométrica inválida (pixel fora da imagem, câmera degenerada)."""


class ShapeMismatchError(GPNeRFError):
    """Tensores com formatos incompatíveis."""


class LabelError(GPNeRFError):
    """Rótulo fora do conjunto de classes."""


class InferencePurityError(GPNeRFError):
    """Mapa de inferência contém pixels vindos do professor."""


class TrainingDivergedError(GPNeRFError):
    """Perda não finita durante o treino."""

    def __init__(self, mensagem, relatorio=None):
        self.relatorio = relatorio or {}
        super().__init__(f"{mensagem}: {self.relatorio}")


class CheckpointError(GPNeRFError):
    """Checkpoint ausente, incompleto ou incompatível."""


class GradcheckFailure(GPNeRFError):
    """Alguma verificação de gradiente falhou."""

    exit_code = 3

    def __init__(self, falhas):
        self.falhas = list(falhas)
        super().__init__(f"Verificações de gradiente com falha: {', '.join(self.falhas)}")
