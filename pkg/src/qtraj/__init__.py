"""Quantum trajectories of repeated perfect measurement: purification and dark subspaces."""

from .darkspace import (
    Counterexample,
    DarkProjection,
    VerificationUndecided,
    dark_step,
    dark_walk,
    detect_dark,
    detpos_implication_check,
    equal_spectra_check,
    scalar_compression_check,
    verify_dark,
)
from .diagnostics import (
    classify_purification,
    delta_m,
    dichotomy_report,
    moments,
    nielsen_gap,
    spectrum_drift,
)
from .instrument import (
    AncillaSpec,
    KrausInstrument,
    apply,
    block_permutation_instrument,
    block_projection,
    from_ancilla_unitary,
    from_von_neumann,
    mean_channel,
    random_instrument,
    tensor_dark_instrument,
    validate,
)
from .trajectory import (
    PathRecord,
    TrajectoryConfig,
    conditional_state,
    cylinder_probability,
    enumerate_words,
    maximally_mixed,
    run_ensemble,
    simulate,
    step,
)

__version__ = "0.1.0"
