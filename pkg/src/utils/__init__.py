# /src/utils/__init__.py

"""
Serviços do GP-NeRF: oráculo de cenas, E/S do dataset, geometria, perdas,
treino, checkpoints, avaliação e verificação de gradientes.
"""
