"""
Entry point for CLI module execution.
Allows running: python -m app.cli <command>
"""
from app.cli.binaural import main

if __name__ == '__main__':
    main()
