import sys

from dischargekit.cli import main

sys.exit(main())
