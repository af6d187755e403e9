# Arquivo vazio para tornar o diretório um pacote Python

