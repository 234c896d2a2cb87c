"""Execute-order-validate permissioned ledger with an IoT smart-home contract."""

__version__ = "0.1.0"
