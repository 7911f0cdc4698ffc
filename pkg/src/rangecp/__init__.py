"""Range-only collision prediction between mobile agents."""
from .kinematics import AgentState, BodyGeometry, CPParams, collision_time, cp_params

__version__ = "0.1.0"

__all__ = ["AgentState", "BodyGeometry", "CPParams", "collision_time", "cp_params", "__version__"]
