"""Dense retrieval with relational-metadata query augmentation."""

__version__ = "0.1.0"
