"""Skolem-chase toolkit: chase, homomorphisms, cores, UCQ rewriting, the
marked-query calculus for grid theories, locality probes and normalization."""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    Atom,
    ConjunctiveQuery,
    Constant,
    Instance,
    Rule,
    RuleSet,
    Skolem,
    Variable,
)
from .textio import (  # noqa: E402
    ParseError,
    parse_instance,
    parse_queries,
    parse_query,
    parse_rules,
)

__all__ = [
    "__version__", "Atom", "ConjunctiveQuery", "Constant", "Instance", "Rule", "RuleSet",
    "Skolem", "Variable", "ParseError", "parse_instance", "parse_queries", "parse_query",
    "parse_rules",
]
