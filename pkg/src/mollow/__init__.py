"""Resonance fluorescence of a driven quantum dot: Mollow spectra, sideband
filtering, photon-stream simulation, correlation histograms and fits."""

from .emitter import (
    EmitterParams,
    SpectralDensity,
    dressed_coefficients,
    emission_spectrum,
    g1_correlation,
    modified_lifetime,
)
from .interferometry import (
    FabryPerotSetting,
    MichelsonSetting,
    coherence_length,
    double_michelson_filter,
    fabry_perot_scan,
    sideband_filters,
)
from .photon_stream import PhotonStream, StreamConfig, simulate_dressed_cascade
from .correlation import (
    CorrelationHistogram,
    G2ModelParams,
    HomSetup,
    convolve_irf,
    histogram_g2,
    hom_model,
    hom_simulate,
    visibility,
)
from .fitting import FitResult, extract_visibility, fit_g2, fit_linear_eid, fit_lorentzian

__version__ = "0.1.0"
