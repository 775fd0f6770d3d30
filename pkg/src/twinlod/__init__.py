"""Digital-twin federation stack: context broker, IoT gateway, dataflow
engine, open-data portal, access control, and the twin collaboration
scenario that wires them together."""

__version__ = "0.1.0"
