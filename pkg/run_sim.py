# IMPORTANT: Read instructions/architecture before making changes to this file
"""
Main simulator launcher.
See instructions/architecture for development guidelines.
"""

from fireguard.commands import create_cli

if __name__ == '__main__':
    create_cli()(prog_name='fireguard')
