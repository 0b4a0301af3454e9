import sys

from vila.cli import main

sys.exit(main())
