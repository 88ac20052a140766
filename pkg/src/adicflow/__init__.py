"""adicflow: adic dynamics on graded bipartite graphs.

Level graphs stack into a bi-infinite graded graph; the space of edge
paths carries an adic (successor) order, a renormalization cocycle of
incidence matrices, a family of finitely-additive transverse measures,
and the obstruction theory for solving the cohomological equation of
the vertical flow.  See the individual modules:

    diagram     level graphs, incidence matrices, diagram windows/ensembles
    ordering    path windows, adic order, successor map, flow arcs
    cocycle     matrix products, Lyapunov spectra, unstable splittings
    measures    positive and signed finitely-additive measure families
    cohomology  cylinder functions, obstructions, Birkhoff/transfer data
    cli         experiment harness (``adicflow <subcommand>``)
"""

__version__ = "0.1.0"

from .diagram import (
    Cylinder,
    Diagram,
    DiagramEnsemble,
    LevelGraph,
    cylinders,
    fibonacci_graph,
    graph_from_incidence,
    identity_graph,
    incidence,
    sample_diagram,
    validate_graph,
)

__all__ = [
    "Cylinder",
    "Diagram",
    "DiagramEnsemble",
    "LevelGraph",
    "cylinders",
    "fibonacci_graph",
    "graph_from_incidence",
    "identity_graph",
    "incidence",
    "sample_diagram",
    "validate_graph",
    "__version__",
]
