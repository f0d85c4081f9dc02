"""
Utility helpers shared by the services (binary container format).
"""
from app.utils.containers import Container, read_container, write_container

__all__ = [
    "Container",
    "read_container",
    "write_container",
]
