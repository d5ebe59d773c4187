"""
Allow running the package as a module: python -m effc_toolkit
"""

from .main import main

if __name__ == "__main__":
    main()
