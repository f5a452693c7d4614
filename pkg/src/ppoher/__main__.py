import sys

from ppoher.cli import main

sys.exit(main())
