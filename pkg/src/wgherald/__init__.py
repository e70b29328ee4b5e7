"""Simulation of heralded collective-excitation preparation in atom arrays
coupled to a waveguide: Lindblad dynamics in the symmetric subspace, quantum
Zeno transfer steps, four heralding protocols, Fock-state merging and a
full-space oracle for validation."""

__version__ = "0.1.0"
