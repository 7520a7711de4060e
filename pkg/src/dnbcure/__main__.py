import sys

from dnbcure.cli import main

sys.exit(main())
