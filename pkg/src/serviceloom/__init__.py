"""serviceloom: mixed-initiative semantic service discovery and composition.

The package is organised around an immutable ontology store with precomputed
subsumption closures, a versioned service registry, a GraphPlan-style
composition planner with subsumption matching and mutex analysis, an assist
layer of advisory suggestion/verification operations, and a session layer
that ties everything together behind a wire API and a CLI.
"""

__version__ = "0.1.0"
