"""Allow ``python -m viewsynth``."""

import sys

from .cli import main

sys.exit(main())
