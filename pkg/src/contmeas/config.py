"""Numerical tolerances with their default values.

Every routine that takes a tolerance argument defaults to the matching field
of :data:`DEFAULT`. The CLI builds a modified copy from ``--tol-override``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    hermitian: float = 1e-12     # relative, entrywise
    unitary: float = 1e-10       # times sqrt(n), Frobenius
    eig_cluster: float = 1e-9    # relative spectral gap for tie-breaking
    prune: float = 1e-9          # relative Gram-Schmidt pruning
    witt_null: float = 1e-9      # relative null-eigenvalue threshold
    closure: float = 1e-8
    span_equal: float = 1e-8
    block: float = 1e-8
    ode_drift: float = 1e-6
    completeness: float = 1e-4
    achievable: float = 1e-6

    def replace(self, **changes) -> "Tolerances":
        return dataclasses.replace(self, **changes)

    def override(self, pairs) -> "Tolerances":
        """Apply ``name=value`` strings, rejecting unknown names."""
        known = {f.name for f in dataclasses.fields(self)}
        changes = {}
        for item in pairs:
            name, sep, value = item.partition("=")
            name = name.strip()
            if not sep or name not in known:
                raise KeyError(f"unknown tolerance override {item!r}")
            changes[name] = float(value)
        return self.replace(**changes)


DEFAULT = Tolerances()
