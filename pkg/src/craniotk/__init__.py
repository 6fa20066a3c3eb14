"""craniotk: desk-scale cranial implant pipeline on binary skull masks.

Virtual craniectomy defect simulation, rigid alignment to an atlas common
space, classical implant baselines (atlas subtract, mirroring), and
Dice/Hausdorff evaluation, with NIfTI-subset file I/O and a batch CLI.
"""

__version__ = "0.1.0"

from .grid import GridGeometry, ScalarGrid, VoxelGrid  # noqa: E402,F401
from .transforms import RigidTransform, common_grid  # noqa: E402,F401
