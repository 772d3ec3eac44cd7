import sys

from tensorvi.cli import main

sys.exit(main())
