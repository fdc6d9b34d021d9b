import sys

from polqkd.cli import main

sys.exit(main())
