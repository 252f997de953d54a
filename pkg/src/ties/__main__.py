import sys

from ties.cli import main

sys.exit(main())
