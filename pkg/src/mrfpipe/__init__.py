"""Magnetic resonance fingerprinting with mismatch prediction and adaptive filtering."""

from .config import ExperimentConfig, load_config
from .dictionary import FingerprintDictionary, build_dictionary, build_grid
from .pipeline import run_experiment
from .sequence import Schedule, TissueParams, generate_schedule, simulate_evolution

__version__ = "0.1.0"
