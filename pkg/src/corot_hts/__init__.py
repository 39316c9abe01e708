"""Geometrically nonlinear co-rotational solver on hybrid Trefftz stress tets."""

__version__ = "0.1.0"
