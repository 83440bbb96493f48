import sys

from diffusion_pinn.cli import main

sys.exit(main())
