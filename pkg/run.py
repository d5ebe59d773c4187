"""
Quick start script for the fast fragmentation-coalescence toolkit
Run this file with the same arguments as the `effc` command
"""

from src.effc_toolkit.main import main

if __name__ == "__main__":
    main()
