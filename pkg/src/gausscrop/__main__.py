import sys

from gausscrop.cli import main

sys.exit(main())
