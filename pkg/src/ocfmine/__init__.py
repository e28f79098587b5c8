"""Edge-assisted collaborative PoW mining: coalition formation under a priced compute market.

The ECP (leader) prices nonce computation; mobile users form possibly
overlapping coalitions and the coalitions then compete for nonces.
"""

from .config import Config, PricingConfig, load_config
from .erc import ErcEquilibrium, ErcInput, closed_form_ne, gap_bound, solve_erc
from .model import CoalitionStructure, ConfigError, SystemParams, assign_transactions, generate_pool
from .ocf import (FormationOutcome, MarketContext, NonConvergenceError, StructureEvaluation,
                  converge_structure, form_coalitions, is_stable)
from .stackelberg import PricingNotConverged, StackelbergResult, solve_stackelberg

__version__ = "0.1.0"

__all__ = [
    "Config", "PricingConfig", "load_config",
    "ErcEquilibrium", "ErcInput", "closed_form_ne", "gap_bound", "solve_erc",
    "CoalitionStructure", "ConfigError", "SystemParams", "assign_transactions", "generate_pool",
    "FormationOutcome", "MarketContext", "NonConvergenceError", "StructureEvaluation",
    "converge_structure", "form_coalitions", "is_stable",
    "PricingNotConverged", "StackelbergResult", "solve_stackelberg",
]
