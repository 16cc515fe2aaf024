# Python package: robust teacher-student knowledge distillation
#        License: MIT (http://opensource.org/licenses/mit-license.php)
#    Description: Train compact student networks that out-score their teacher
#                 on the true label while matching its input gradients.
#                 Numpy tensors, tape autodiff with double backward,
#                 maxout networks, perturbation harness, experiment runner.

import logging

from .constants import VERSION

__title__ = 'pyRobustStudent'
__description__ = 'Robust student network learning by knowledge distillation.'
__version__ = VERSION
__license__ = 'MIT'

logger = logging.getLogger(__name__)
