"""Shared record of acceptance outcomes: criterion number -> (title, passed, detail)."""
LOG = {}
