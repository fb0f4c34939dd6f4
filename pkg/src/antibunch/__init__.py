"""Single-photon emitter simulation and photon-correlation analysis."""
__version__ = "0.1.0"
