import os
import sys

# make sibling helper modules importable regardless of pytest rootdir
sys.path.insert(0, os.path.dirname(__file__))
