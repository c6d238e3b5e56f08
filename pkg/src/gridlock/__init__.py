"""Grid synchronization with stationary- and synchronous-frame FLLs."""
