# Pydantic schemas for config files and API payloads
