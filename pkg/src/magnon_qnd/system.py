"""Physical parameter set for the protocol simulations."""

from dataclasses import dataclass, field, replace
import math

from .hilbert import MHZ, HilbertConfig, MagnonParams, QubitParams, table_cavity_modes
from .pulses import READOUT_GAP, TAU_D
from .readout import MeasuredProbabilities, ReadoutModel


@dataclass(frozen=True)
class SystemParams:
    qubit: QubitParams = field(default_factory=QubitParams)
    magnon: MagnonParams = field(default_factory=MagnonParams)
    cavities: tuple = field(default_factory=table_cavity_modes)
    chi_qm: float = -1.91 * MHZ
    delta_d: float = -0.01 * MHZ
    readout: ReadoutModel = field(default_factory=ReadoutModel)
    measured: MeasuredProbabilities = field(default_factory=MeasuredProbabilities)
    hilbert: HilbertConfig = field(default_factory=HilbertConfig)
    tau_d: float = TAU_D
    readout_gap: float = READOUT_GAP
    rtol: float = 1e-8
    atol: float = 1e-10

    def __post_init__(self):
        if not self.tau_d > 0:
            raise ValueError("tau_d must be positive")
        if not self.readout_gap >= 0:
            raise ValueError("readout_gap must be non-negative")
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("integrator tolerances must be positive")

    @property
    def alpha(self):
        return self.qubit.alpha0

    def replace(self, **changes):
        return replace(self, **changes)

    def with_qubit(self, **changes):
        return replace(self, qubit=replace(self.qubit, **changes))

    def with_magnon(self, **changes):
        return replace(self, magnon=replace(self.magnon, **changes))

    def without_initialization_error(self):
        return self.with_qubit(eps_ini=0.0)

    def without_decoherence(self):
        return self.with_qubit(T1=math.inf, T2_star=math.inf)

    def without_readout_error(self):
        return replace(self, readout=ReadoutModel(0.0, 0.0, self.readout.delta_t_r))

    def without_qubit_errors(self):
        return self.without_initialization_error().without_decoherence().without_readout_error()


def improved_device(base=None):
    """Qubit coherence, initialization and readout of the projected device."""
    base = base or SystemParams()
    s = base.with_qubit(eps_ini=0.01, T1=20e-6, T2_star=20e-6)
    return replace(s, readout=ReadoutModel(0.01, 0.01, base.readout.delta_t_r))
