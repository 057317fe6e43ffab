"""Ageing-aware charging policy synthesis with sampling-based certification.

The package couples a reduced-order lithium-ion cell simulator (SEI ageing,
lumped thermal dynamics) with an actor-critic policy learner, finite
window-based abstractions of closed-loop label traces, a scenario-theory
risk certificate, and a counterexample-driven refinement loop that produces
a switched charging controller.
"""

from chargecert.battery import (
    CellParameters,
    CellState,
    OutputLabel,
    OutputMeasurement,
    label,
    make_cell_parameters,
    measure,
    sample_cell,
    step,
)
from chargecert.abstraction import (
    Abstraction,
    Alphabet,
    Behavior,
    build_salca,
    enumerate_behaviors,
    subsequences,
)
from chargecert.certificate import ScenarioCertificate, complexity, epsilon
from chargecert.verify import (
    RwaSpec,
    VerificationResult,
    extract_counterexamples,
    rwa_check,
    worst_case_hitting_time,
)
from chargecert.protocols import (
    CcCvConfig,
    Rect,
    SwitchedController,
    Trace,
    rollout,
    run_ccv,
    select_policy,
)
from chargecert.learner import Policy, RewardConfig, TrainConfig, act, reward, train
from chargecert.cegis import CegisConfig, CegisRecord, make_partition, run as run_cegis

__version__ = "0.1.0"

__all__ = [
    "CellParameters", "CellState", "OutputMeasurement", "OutputLabel",
    "step", "measure", "label", "sample_cell", "make_cell_parameters",
    "Alphabet", "Behavior", "Abstraction", "build_salca",
    "enumerate_behaviors", "subsequences",
    "ScenarioCertificate", "complexity", "epsilon",
    "RwaSpec", "VerificationResult", "rwa_check", "worst_case_hitting_time",
    "extract_counterexamples",
    "CcCvConfig", "Rect", "SwitchedController", "Trace",
    "rollout", "run_ccv", "select_policy",
    "Policy", "RewardConfig", "TrainConfig", "act", "reward", "train",
    "CegisConfig", "CegisRecord", "make_partition", "run_cegis",
    "__version__",
]
