import sys

from mvfusion.external.cli import main

sys.exit(main())
