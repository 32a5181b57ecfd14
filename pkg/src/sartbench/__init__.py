"""Desk-scale workbench for self-augmented imitation learning.

A single expert demonstration plus human-annotated precision spheres is
expanded into a diverse, collision-free training set, used to train a
behavioral-cloning policy, and benchmarked against replay / multi-demo BC /
a contact-free fixed-sphere baseline on clearance-limited kinematic tasks.
"""

__version__ = "0.1.0"
