"""Desk-scale SEU simulator for FPGA configuration memory with scrubbing
policies and a fault-injection campaign harness."""

__version__ = "0.1.0"
