"""Isochronous voltage/active-power droop for parallel single-phase inverters."""
from .net_model import (AdmittanceModel, DomainError, InverterElectrical, LoadModel,
                        MicrogridConfig, build_admittance, load_impedance_at)

__all__ = ["AdmittanceModel", "DomainError", "InverterElectrical", "LoadModel",
           "MicrogridConfig", "build_admittance", "load_impedance_at"]
