import sys
from pathlib import Path

# make helpers.py importable from any pytest rootdir
sys.path.insert(0, str(Path(__file__).parent))
