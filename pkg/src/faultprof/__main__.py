from faultprof.cli import main
import sys
sys.exit(main())
