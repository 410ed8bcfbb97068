import sys

from corticast.main import main

sys.exit(main())
