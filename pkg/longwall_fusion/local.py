from os import makedirs, path, walk
from typing import Iterator, Optional

from .client import ArtifactClient
from .exception import StorageException


class LocalDirectory(ArtifactClient):
    """
    LocalDirectory.

    Buckets are directories under root; object names map to relative paths.
    """

    def __init__(self, root: str = ".") -> None:
        super().__init__()
        self._root = root

    def configure(self) -> None:
        self._root = path.realpath(self._root)

    def _bucket(self, name: str) -> str:
        return path.join(self._root, name) if name else self._root

    def _path(self, bucket_name: str, name: str) -> str:
        bucket = self._bucket(bucket_name)
        target = path.realpath(path.join(bucket, name))
        if target != bucket and not target.startswith(bucket + path.sep):
            raise StorageException(
                "object {0} escapes bucket {1}".format(name, bucket_name)
            )
        return target

    def bucket_exists(self, name: str) -> bool:
        return path.isdir(self._bucket(name))

    def make_bucket(self, name: str) -> None:
        makedirs(self._bucket(name), exist_ok=True)

    def put_object(self, bucket_name: str, name: str, data: bytes) -> None:
        if not self.bucket_exists(bucket_name):
            raise StorageException(
                "bucket {0} does not exist".format(bucket_name)
            )
        target = self._path(bucket_name, name)
        makedirs(path.dirname(target), exist_ok=True)
        with open(target, "wb") as handle:
            handle.write(data)

    def object_exists(self, bucket_name: str, name: str) -> bool:
        return path.isfile(self._path(bucket_name, name))

    def get_object(self, bucket_name: str, name: str) -> bytes:
        if not self.object_exists(bucket_name, name):
            raise StorageException(
                "object {0} does not exist in bucket {1}".format(
                    name, bucket_name
                )
            )
        with open(self._path(bucket_name, name), "rb") as handle:
            return handle.read()

    def list_objects(
        self, bucket_name: str, prefix: Optional[str]
    ) -> Iterator[str]:
        bucket = self._bucket(bucket_name)
        if not path.isdir(bucket):
            raise StorageException(
                "bucket {0} does not exist".format(bucket_name)
            )
        names = []
        for dirpath, _, filenames in walk(bucket):
            for filename in filenames:
                rel = path.relpath(path.join(dirpath, filename), bucket)
                rel = rel.replace(path.sep, "/")
                if prefix is None or rel.startswith(prefix):
                    names.append(rel)
        return iter(sorted(names))
