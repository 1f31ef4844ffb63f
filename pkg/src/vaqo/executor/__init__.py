from .engine import BATCH_SIZE, Batch, ExecStats, ExecutionError, ResultSet, execute
from .reference import run_reference

__all__ = ["BATCH_SIZE", "Batch", "ExecStats", "ExecutionError", "ResultSet", "execute", "run_reference"]
