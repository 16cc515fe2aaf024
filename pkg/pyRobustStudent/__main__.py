""" Run the pyRobustStudent experiment runner: python -m pyRobustStudent """

import sys

from .cli import main

sys.exit(main())
