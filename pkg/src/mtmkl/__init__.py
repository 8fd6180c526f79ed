"""Multi-task multiple kernel learning with lp-norm kernel weights.

Submodules: `core` (datasets, losses, feature maps), `taskstruct`
(task-coupling constructors), `solver` (feature-space trainer),
`kernel_oracle` (precomputed-kernel reference solver), `datagen`
(synthetic benchmark data), `evaluation` (AUC/ROC and baselines),
`figures` (report plots), `cli` (command line).
"""

from . import core, datagen, evaluation, figures, kernel_oracle, solver, taskstruct

__version__ = "0.1.0"

__all__ = ["core", "datagen", "evaluation", "figures", "kernel_oracle",
           "solver", "taskstruct", "__version__"]
