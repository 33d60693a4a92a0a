"""Vision + robot-state force estimation for teleoperated surgical robots (desk scale)."""

__version__ = "0.1.0"
