"""
Taint-guided performance modeling.

Programs written in PTL (a small imperative language) run under a dynamic
taint analysis; the dependencies it finds constrain an empirical PMNF modeler.
"""

__version__ = "1.0.0"

SCHEMA_VERSION = 1
