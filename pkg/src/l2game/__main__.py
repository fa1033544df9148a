from l2game.cli import main
import sys

sys.exit(main())
