# Orchestration services used by the management commands
