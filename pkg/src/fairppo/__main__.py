from __future__ import annotations

import sys

from fairppo.harness.cli import main

sys.exit(main())
