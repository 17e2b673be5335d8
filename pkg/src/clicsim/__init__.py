"""Cycle-approximate simulator of RISC-V CLINT/PLIC vs CLIC interrupt latency under an OSEK-style RTOS."""

__version__ = "0.1.0"
