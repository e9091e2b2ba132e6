"""python -m taintmodel"""

from .cli import main

raise SystemExit(main())
