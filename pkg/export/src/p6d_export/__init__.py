"""Offline exporters that turn images, renders and videos into the pose
toolkit's file formats, plus the object-size database generator."""

__version__ = "0.1.0"
