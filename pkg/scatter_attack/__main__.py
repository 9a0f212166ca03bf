"""Allow ``python -m scatter_attack``."""

import sys

from .cli import main

sys.exit(main())
