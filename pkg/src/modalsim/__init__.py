"""Reduced-density-matrix branch dynamics: spectra, pointer collapse and branch-jump sampling."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigError,
    DegenerateSpectrumError,
    GramIndefiniteError,
    InfeasibleStepError,
    ModalSimError,
    NotHermitianError,
    NotNormalizedError,
    NotUnitaryError,
    NumericalError,
    ValidationError,
)
from .linalg import (  # noqa: E402
    BipartiteState,
    DensityMatrix,
    SchmidtDecomposition,
    SpectralDecomposition,
    eigen_decompose,
    minimal_unitary,
    reduced_density_matrix,
    schmidt_decompose,
)
from .lattice import (  # noqa: E402
    LatticeGrid,
    LatticeWaveFunction,
    decohered_rho,
    gaussian_decohered_rho,
    image_sum_kernel,
    localization_length,
)
from .pointer import (  # noqa: E402
    CrossoverParams,
    PointerFamily,
    crossover_spectrum,
    imperfect_measurement_blocks,
    measurement_rho,
)
from .stochastic import (  # noqa: E402
    BranchFrame,
    TransitionKernel,
    continuous_j_matrix,
    discrete_kernel,
    match_branches,
    run_ensemble,
    sample_history,
)
from .decay import DecayParams, decay_full_state, decay_kernel, simulate_geiger  # noqa: E402
from .oracles import GaussianOracle, SquareWellOracle, gaussian_spectrum, square_well_spectrum  # noqa: E402
from .config import ScenarioConfig, load_config, parse_config  # noqa: E402
