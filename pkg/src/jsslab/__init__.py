"""Scherk-type graphs with infinite boundary values, radial Jang blow-up and MOTS stability."""

__version__ = "0.1.0"

__all__ = [
    "cli",
    "domain_io",
    "domains",
    "errors",
    "exprs",
    "flux",
    "geometry",
    "jang",
    "limits",
    "mesh",
    "pmc",
    "stability",
    "uniqueness",
]
