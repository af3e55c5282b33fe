"""Eigenvalue asymptotics for a 2x2 Dirac system with L_p potentials."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    BoundaryZeroError,
    ConfigError,
    DiracError,
    DomainError,
    GridMismatchError,
    NumericalError,
)
from .potential import Potential, PotentialPair, build_potential, derive_constants, make_pair  # noqa: E402
from .kernel import (  # noqa: E402
    KernelBundle,
    KernelField,
    ScalarField,
    TriangleGrid,
    apply_T,
    b_norm,
    build_J_tilde,
    build_N,
    neumann_bundle,
    neumann_solve,
    sigma_tilde,
)
from .solver import (  # noqa: E402
    approx_D0,
    approx_leading,
    approx_N,
    solve_direct,
    solve_via_kernel,
)
from .spectrum import (  # noqa: E402
    EigenRecord,
    DecayReport,
    asymptotic_eigenfunction_full,
    asymptotic_eigenfunction_short,
    asymptotic_mu0,
    char_fn,
    decay_report,
    eigenfunction,
    locate_eigenvalues,
    simplified_mu0,
)

__all__ = [name for name in dir() if not name.startswith("_")]
