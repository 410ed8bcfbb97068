"""
Neonatal cortical-surface phenotype regression toolkit
"""

__version__ = "1.0.0"
