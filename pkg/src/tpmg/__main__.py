import sys

from tpmg.cli import main

sys.exit(main())
