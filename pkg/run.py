import sys

from ttstar.main import run

if __name__ == "__main__":
    # Start the command-line front end
    sys.exit(run(sys.argv[1:]))
