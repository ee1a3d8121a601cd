import sys

from culrag.cli import main

sys.exit(main())
