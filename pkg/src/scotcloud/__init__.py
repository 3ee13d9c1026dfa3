"""scotcloud: SCOT tag-cloud annotation server, client simulator, and 3D layout."""

__version__ = "0.1.0"
