"""Hahn-echo decoherence of NV centers in driven P1 spin baths via partition CCE."""

from .analysis import FitResult, bootstrap_errors, fit_scaling, fit_stretched
from .cce import CCEConfig, cce_coherence, ensemble_coherence
from .dynamics import CoherenceCurve, HahnEchoSchedule, deer_spectrum, flip_flop_rate, hahn_echo
from .hamiltonian import DrivingProtocol, DrivingTone, SpinCluster, cluster_hamiltonian, preset_protocol
from .lattice import generate_bath, interaction_cutoff
from .oracle import ExactSystem, exact_hahn_echo
from .p1 import branch_populations, branch_shift, sample_branches

__version__ = "0.1.0"
