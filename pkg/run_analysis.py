#!/usr/bin/env python3
"""
Coarse Guidance Toolkit - entry point

    python run_analysis.py holdlimit --config default --out results/
"""

import sys

# Add current directory to path
sys.path.append('.')

from api.cli import main

if __name__ == '__main__':
    main()
