import sys

from liner_blc_transfer.cli import main

sys.exit(main())
