# Python script to run SwCOPF with command-line interface

# Before running this script, follow `README.md` to:
# 1. Create the conda environment from `environment_swcopf.yml`
# 2. Activate that environment
# 3. Install `swcopf` into the activated environment with `pip install -e .` (only needed once)

import sys

from swcopf.cli import main

if __name__ == "__main__":
    # From the demo/ directory:
    # python ../scripts/run_swcopf.py samples --eps 0.1 --beta 1e-6 --nu 10 --bound explicit
    # python ../scripts/run_swcopf.py acopf --case cases/radial_3bus.json
    # python ../scripts/run_swcopf.py swc --case cases/triangle_3bus.json --model models/triangle_3bus_box.yml --eps 0.2 --beta 0.05 --seed 0
    # python ../scripts/run_swcopf.py validate --case cases/triangle_3bus.json --model models/triangle_3bus_box.yml --decision output/swc.json --seed 1
    # python ../scripts/run_swcopf.py run --params_path params/triangle_3bus_swc.yml --log_file swcopf_log.txt

    sys.exit(main())
