"""Computational laboratory for diagonal flows on the space of unimodular lattices."""

from .lattice_core import (
    LatticeBasis,
    NormKind,
    ShortVec,
    delta,
    primitive_pairs_in_ball,
    primitive_vectors_in_ball,
    reduce_basis,
    shortest_vector,
    tuple_is_primitive,
)

__version__ = "0.1.0"
