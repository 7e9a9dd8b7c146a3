#!/usr/bin/env python3
"""
Module Entry Point
Allows `python -m cihybrid <command>`.
"""

import sys

from cihybrid.cli import main


if __name__ == '__main__':
    sys.exit(main())
