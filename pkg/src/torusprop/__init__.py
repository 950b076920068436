"""Numerical toolkit for Berezin-Toeplitz quantization on the flat two-torus.

The package verifies, at desk scale, the semiclassical asymptotics of two
kernels attached to a quantized Hamiltonian on T^2 = R^2/Z^2 with symplectic
form 4*pi dp^dq:

* the quantum propagator exp(-i k t T_k(H)) restricted to the graph of the
  classical flow, against a geometric predictor built from parallel
  transport, a metaplectic-style amplitude, and the subprincipal action;
* the smoothed spectral projector f(k(E - T_k(H))), against a sum over
  classical return times on the energy level.

Modules
-------
symplin   linear-symplectomorphism bookkeeping: holomorphic blocks, polar
          factors, branch-continuous square roots
torusgeo  torus phase-space geometry: flows, transport phases, amplitudes
thetaq    quantum spaces: theta-function basis, Gram/Toeplitz matrices
propkern  propagator kernels, exact and asymptotic, and their comparison
specproj  smoothed spectral projector kernels, exact and asymptotic
harness   command-line entry point, config handling, CSV/JSON reports
"""

from __future__ import annotations

__version__ = "0.1.0"

__all__ = ["__version__"]
