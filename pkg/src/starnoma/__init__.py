"""Max-min fair NOMA with improper signaling over STAR-RIS-assisted MIMO broadcast channels with I/Q imbalance."""
from .ao import AoConfig, AoResult, evaluate_design_under_mismatch, optimize
from .channel import ComplexScenario, ScenarioConfig, StarRisState, generate_scenario
from .impairments import IqiProfile, IqiSetup
from .rates import RateReport, RealCovarianceSet, evaluate_rates

__all__ = [
    "AoConfig", "AoResult", "ComplexScenario", "IqiProfile", "IqiSetup", "RateReport",
    "RealCovarianceSet", "ScenarioConfig", "StarRisState", "evaluate_design_under_mismatch",
    "evaluate_rates", "generate_scenario", "optimize",
]
__version__ = "0.1.0"
