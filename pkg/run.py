#!/usr/bin/env python3
"""
Simple script to run the corticast command line
"""

import sys

from corticast.core.config import settings
from corticast.main import main

if __name__ == "__main__":
    if len(sys.argv) == 1:
        print(f"{settings.PROJECT_NAME} v{settings.VERSION}")
        print(settings.DESCRIPTION)
        print(f"Worker threads: {settings.resolved_threads()}")
        print("Commands: icosphere, resample, synth, summary, train, eval, cv, protocol, explain")
        print("Run with --help for details")
        print("-" * 50)
        sys.exit(0)
    sys.exit(main(sys.argv[1:]))
