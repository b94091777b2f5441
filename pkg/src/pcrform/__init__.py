"""Large-scale formation planning via point-cloud registration.

Subpackages and modules:

* :mod:`pcrform.geometry` and :mod:`pcrform.robust` for Sim(3) registration
* :mod:`pcrform.formation` for optimal formation positions and error metrics
* :mod:`pcrform.trajectory` and :mod:`pcrform.optimizer` for trajectory planning
* :mod:`pcrform.sim` for the swarm simulator
* :mod:`pcrform.config`, :mod:`pcrform.shapes`, :mod:`pcrform.experiments`
  and :mod:`pcrform.cli` for scenarios and benchmarks
"""

from .errors import PcrformError
from .formation import FormationSpec, compute_ofps, formation_error
from .geometry import Sim3Transform, align_closed_form
from .robust import RansacConfig, ransac_register

__version__ = "0.1.0"

__all__ = [
    "FormationSpec",
    "PcrformError",
    "RansacConfig",
    "Sim3Transform",
    "align_closed_form",
    "compute_ofps",
    "formation_error",
    "ransac_register",
]
