import sys

from revprop.bench.cli import main

sys.exit(main())
