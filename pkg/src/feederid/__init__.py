"""Line parameter estimation for radial distribution feeders under partial observability."""

__version__ = "0.1.0"
