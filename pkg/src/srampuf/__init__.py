"""Transient-level SRAM start-up simulation for PUF reliability analysis."""
from .device import CellEnvironment, CellInstance, DeviceConfig, MosParams, Polarity
from .dynamics import IntegratorSpec, RampSpec, StateLabel, StateVector
from .separatrix import SdRecord, compute_sd, sd_oracle
from .startup import NoiseSpec, StartupDataset, StartupRecord
from .transfer import DoubleLogistic, FitResult, SingleLogistic
from .variation import MismatchSpec, Population

__version__ = "0.1.0"

__all__ = [
    "CellEnvironment", "CellInstance", "DeviceConfig", "MosParams", "Polarity",
    "IntegratorSpec", "RampSpec", "StateLabel", "StateVector",
    "SdRecord", "compute_sd", "sd_oracle",
    "NoiseSpec", "StartupDataset", "StartupRecord",
    "DoubleLogistic", "FitResult", "SingleLogistic",
    "MismatchSpec", "Population",
]
