"""
DeltaNet State Pruning - poda de dimensión de estado y verificación numérica
"""

__version__ = "0.3.1"
