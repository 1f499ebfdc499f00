"""
Environment Module
Asset fleet, forecast uncertainty, DSO settlement and the microgrid-cluster Markov game
"""

from .assets import AssetFleet, PriceBook, build_price_book, load_fleet
from .dso import dso_merit_order_dispatch, merit_order
from .mgc_env import EnvState, JointAction, MgcEnv, Transition, mg_supply, project_action
from .uncertainty import build_error_model, sample_net_load

__all__ = ['AssetFleet', 'PriceBook', 'build_price_book', 'load_fleet',
           'dso_merit_order_dispatch', 'merit_order',
           'EnvState', 'JointAction', 'MgcEnv', 'Transition', 'mg_supply', 'project_action',
           'build_error_model', 'sample_net_load']
