from typing import List

# Estrategias de poda permitidas (las dos PCA no están alineadas a ejes)
ESTRATEGIAS_PERMITIDAS: List[str] = [
    'rand',
    'l1',
    'swanda',
    'grad',
    'drrqr',
    'pca',
    'pca-adversarial'
]

# Modos de selección: conjunto, solo claves, solo consultas
MODOS_PERMITIDOS: List[str] = [
    'joint',
    'keys',
    'queries'
]

# Umbrales numéricos
TOL_SRRQR_RELATIVA: float = 1e-12
TOL_RANGO_NUMERICO: float = 1e-10
TOL_KAPPA_INFINITO: float = 1e-14
TOL_JACOBI: float = 1e-12
TOL_MATRIZ_CERO: float = 1e-14
TOL_AUTOVALOR_PCA: float = 1e-12
MAX_BARRIDOS_JACOBI: int = 80

# Rechazo de muestras degeneradas en la verificación
GAMMA_MINIMO: float = 1e-3
RESPUESTA_MINIMA: float = 1e-10
ERRORES_ESTANDAR: float = 3.0
