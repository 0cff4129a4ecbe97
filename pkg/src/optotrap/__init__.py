"""Radiation-pressure trapping and cooling of a movable mirror in two- and
three-mirror optical cavities."""

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .params import (  # noqa: F401
    DerivedConstants,
    DriveField,
    SystemParams,
    ValidationReport,
    derive_constants,
    ground_state_setup,
    reference_system,
    reference_trap_drive,
    validate,
)
