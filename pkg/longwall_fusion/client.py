from abc import ABC, abstractmethod
from typing import Iterator, Optional


class ArtifactClient(ABC):
    """
    ArtifactClient.

    Primitive object operations on one backend. A bucket is a top-level
    container (a directory for the local backend); names are slash-separated
    keys within it.
    """

    @abstractmethod
    def configure(self) -> None:
        pass

    @abstractmethod
    def bucket_exists(self, name: str) -> bool:
        pass

    @abstractmethod
    def make_bucket(self, name: str) -> None:
        pass

    @abstractmethod
    def put_object(self, bucket_name: str, name: str, data: bytes) -> None:
        pass

    @abstractmethod
    def get_object(self, bucket_name: str, name: str) -> bytes:
        pass

    @abstractmethod
    def object_exists(self, bucket_name: str, name: str) -> bool:
        pass

    @abstractmethod
    def list_objects(
        self, bucket_name: str, prefix: Optional[str]
    ) -> Iterator[str]:
        pass
