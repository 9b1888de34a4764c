"""Numerical WKB machinery for fractional half-wave propagators on periodic boxes.

The package builds the classical ingredients of a semiclassical parametrix for
e^{itH^{-1}(h Lambda)^sigma}: Hamiltonian flows and their variational systems
(`hamflow`), Hamilton-Jacobi phases with certified estimates (`hamjac`),
transport amplitudes (`transport`), and oscillatory-integral operators (`fio`).
Exact spectral references, admissibility arithmetic, space-time norm scaling
experiments and nonlinear solvers live in `spectral`, `strichartz` and `nlfs`.
"""

__version__ = "0.1.0"
