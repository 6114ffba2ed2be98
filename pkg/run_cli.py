# run_cli.py (project root): `python run_cli.py detect structure.xyz --tol 0.1`
from posner.cli.main import main

if __name__ == "__main__":
    main()
