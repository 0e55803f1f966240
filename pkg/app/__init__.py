"""
Evac Router - Roteamento de evacuação com consciência de congestionamento
"""

__version__ = "1.0.0"
__author__ = "Evac Router Team"
