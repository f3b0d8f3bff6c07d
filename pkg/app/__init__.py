"""Lidar 3D box to image-tight cuboid refinement."""
