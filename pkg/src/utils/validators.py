# /src/utils/validators.py

# Utilitários de validação de formatos, manifestos e listas de vistas
from typing import List, Sequence

import numpy as np
import torch

from src.utils.exceptions import ShapeMismatchError


def validate_required_fields(data, required_fields):
    """Devolve os campos obrigatórios ausentes em `data`."""
    missing_fields = []
    for field in required_fields:
        if field not in data or data[field] is None:
            missing_fields.append(field)

    return missing_fields


def validate_same_shape(a, b, nome="entradas"):
    """Levanta ShapeMismatchError se os formatos diferem."""
    forma_a = tuple(np.shape(a)) if not isinstance(a, torch.Tensor) else tuple(a.shape)
    forma_b = tuple(np.shape(b)) if not isinstance(b, torch.Tensor) else tuple(b.shape)
    if forma_a != forma_b:
        raise ShapeMismatchError(f"{nome}: formatos diferentes {forma_a} e {forma_b}")


def parse_view_ids(texto: str, n_views: int, test_views: Sequence[int]) -> List[int]:
    """
    Converte '0,3,5' (ou 'test' / 'all') em índices de vista.
    Exemplo: '1, 2' -> [1, 2]
    """
    texto = (texto or "test").strip().lower()
    if texto in ("all", "todas"):
        return list(range(n_views))
    if texto in ("test", "teste"):
        return list(test_views)
    indices = []
    for parte in texto.split(","):
        parte = parte.strip()
        if not parte:
            continue
        if not parte.isdigit() or int(parte) >= n_views:
            raise ValueError(f"Índice de vista inválido: {parte!r}")
        indices.append(int(parte))
    return indices
