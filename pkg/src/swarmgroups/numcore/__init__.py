"""Dense numerical substrate: softmax, Jacobi eigensolver, k-means, RNG and a small autodiff tape."""

from .autodiff import Node, Tape, grad
from .eigen import sym_eigen
from .kmeans import kmeans, kmeans_sse
from .matrix import as_matrix, softmax_rows
from .rng import Rng

__all__ = [
    "Node",
    "Rng",
    "Tape",
    "as_matrix",
    "grad",
    "kmeans",
    "kmeans_sse",
    "softmax_rows",
    "sym_eigen",
]
