"""Security analysis toolkit for Progressive Web App manifests."""

__version__ = "0.1.0"
