# Placeholder for tests init file
