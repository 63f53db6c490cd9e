"""Fractional G-Brownian motion: operators, path synthesis, Wick calculus and pricing under volatility uncertainty."""
from .core import (
    Config,
    HurstIndex,
    ScenarioFamily,
    SeedSpec,
    TimeGrid,
    VolatilityBand,
    VolatilityScenario,
    evaluate_scenario,
    load_config,
    make_scenario_family,
)

__version__ = "0.1.0"
