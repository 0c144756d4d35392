"""Allows ``python -m blindloss``."""

import sys

from .cli import main

sys.exit(main())
