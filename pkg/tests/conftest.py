import os
import sys

# src layout: make abm_eql importable without installing
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))
