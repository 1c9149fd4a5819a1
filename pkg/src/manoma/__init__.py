"""Movable-antenna NOMA downlink simulator and joint design optimizer."""

from .config import SystemConfig, ConfigError, dbm_to_watts, watts_to_dbm
from .channel import (
    LayoutState,
    UserGeometry,
    channel_matrix,
    channel_vector,
    field_response_vector,
    geometry_digest,
    path_differences,
    sample_geometry,
)
from .metrics import (
    RateReport,
    TransmitDesign,
    feasibility_report,
    mrt_margins,
    rate_report,
    sinr,
    throughput,
    user_rate,
)
from .bounds import AuxState

__version__ = "0.1.0"
