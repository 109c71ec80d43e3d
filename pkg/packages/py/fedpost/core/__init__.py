"""Ambient infrastructure shared by the fedpost modules."""
