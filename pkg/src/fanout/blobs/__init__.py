"""Content-addressed blob storage and the caching node proxy."""

from .proxy import BlobCache, BlobProxy, ProxyServer, RemoteBlobStore
from .store import BlobRef, BlobStore

__all__ = ["BlobCache", "BlobProxy", "BlobRef", "BlobStore", "ProxyServer",
           "RemoteBlobStore"]
