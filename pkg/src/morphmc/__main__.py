import sys

from morphmc.cli import main

sys.exit(main())
