from typing import Iterator, List, Optional
from urllib.parse import urlsplit

from .client import ArtifactClient
from .exception import StorageException
from .log import logger


class ArtifactStore:
    """
    ArtifactStore.

    Writes and reads CLI artifacts (CSV, PLY, PPM, LUT) under a prefix of one
    bucket, delegating the object operations to an ArtifactClient.
    """

    def __init__(
        self, client: ArtifactClient, bucket_name: str = "", prefix: str = ""
    ) -> None:
        self._client = client
        self._client.configure()
        self.bucket_name = bucket_name
        self.prefix = prefix.strip("/")
        if not self._client.bucket_exists(bucket_name):
            self._client.make_bucket(bucket_name)

    def _key(self, name: str) -> str:
        return "{0}/{1}".format(self.prefix, name) if self.prefix else name

    def put_bytes(self, name: str, data: bytes) -> str:
        key = self._key(name)
        logger.debug(
            "put_bytes(bucket_name='%s', name='%s', data=[omitted], size=%i)",
            self.bucket_name,
            key,
            len(data),
        )
        self._client.put_object(self.bucket_name, key, data)
        return key

    def put_text(self, name: str, text: str) -> str:
        return self.put_bytes(name, text.encode("utf-8"))

    def get_bytes(self, name: str) -> bytes:
        key = self._key(name)
        logger.debug(
            "get_bytes(bucket_name='%s',name='%s')", self.bucket_name, key
        )
        return self._client.get_object(self.bucket_name, key)

    def exists(self, name: str) -> bool:
        key = self._key(name)
        logger.debug(
            "exists(bucket_name='%s',name='%s')", self.bucket_name, key
        )
        return self._client.object_exists(self.bucket_name, key)

    def list(self, prefix: Optional[str] = None) -> List[str]:
        """Names relative to the store prefix, sorted."""
        logger.debug(
            "list(bucket_name='%s',prefix='%s')", self.bucket_name, prefix
        )
        full = self._key(prefix or "")
        keys: Iterator[str] = self._client.list_objects(
            self.bucket_name, full or None
        )
        strip = len(self.prefix) + 1 if self.prefix else 0
        return sorted(key[strip:] for key in keys)


def open_store(url: str) -> ArtifactStore:
    """
    Store for an --out argument.

    ``s3://bucket/prefix`` and ``gs://bucket/prefix`` select the object
    stores; anything else is a local directory.
    """
    parts = urlsplit(url)
    if parts.scheme == "s3":
        from .minio import S3

        client: ArtifactClient = S3()
    elif parts.scheme == "gs":
        from .gcs import GCS

        client = GCS()
    elif parts.scheme in ("", "file"):
        from .local import LocalDirectory

        return ArtifactStore(
            LocalDirectory(parts.path if parts.scheme else url)
        )
    else:
        raise StorageException(
            "unsupported store url scheme {0!r}".format(parts.scheme)
        )
    if not parts.netloc:
        raise StorageException("store url {0} names no bucket".format(url))
    return ArtifactStore(client, parts.netloc, parts.path)
