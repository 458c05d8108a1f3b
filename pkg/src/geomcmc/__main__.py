import sys

from geomcmc.cli import main

sys.exit(main())
