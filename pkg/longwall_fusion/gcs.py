from typing import Iterator, Optional

from google.cloud.storage import Client

from .client import ArtifactClient
from .config import environment
from .exception import StorageException
from .log import logger


class GCS(ArtifactClient):
    """
    GCS.

    Google Cloud Storage; STORAGE_EMULATOR_HOST points it at a
    fake-gcs-server for local runs.
    """

    def __init__(self, project: Optional[str] = None) -> None:
        super().__init__()
        self._gcs_client: Optional[Client] = None
        self._gcs_project = project

    def _client(self) -> Client:
        if self._gcs_client is None:
            raise StorageException("gcs client has not been configured")
        return self._gcs_client

    def configure(self) -> None:
        gcs_config = environment()
        if self._gcs_project is None:
            self._gcs_project = gcs_config["GOOGLE_CLOUD_PROJECT"]
        if self._gcs_project is None:
            raise StorageException(
                "gcs client requires that the GOOGLE_CLOUD_PROJECT env"
                " variable is present or an option is passed"
            )
        if gcs_config["STORAGE_EMULATOR_HOST"] is not None:
            logger.debug(
                "using storage emulator at %s",
                gcs_config["STORAGE_EMULATOR_HOST"],
            )
        self._gcs_client = Client(project=self._gcs_project)

    def bucket_exists(self, name: str) -> bool:
        return self._client().bucket(name).exists()

    def make_bucket(self, name: str) -> None:
        if not self.bucket_exists(name):
            self._client().create_bucket(name)

    def put_object(self, bucket_name: str, name: str, data: bytes) -> None:
        if not self.bucket_exists(bucket_name):
            raise StorageException(
                "bucket {0} does not exist".format(bucket_name)
            )
        blob = self._client().bucket(bucket_name).blob(name)
        with blob.open("wb") as outfile:
            outfile.write(data)

    def object_exists(self, bucket_name: str, name: str) -> bool:
        if not self.bucket_exists(bucket_name):
            return False
        return self._client().bucket(bucket_name).blob(name).exists()

    def get_object(self, bucket_name: str, name: str) -> bytes:
        if not self.object_exists(bucket_name, name):
            raise StorageException(
                "object {0} does not exist in bucket {1}".format(
                    name, bucket_name
                )
            )
        blob = self._client().bucket(bucket_name).blob(name)
        return blob.download_as_bytes()

    def list_objects(
        self, bucket_name: str, prefix: Optional[str]
    ) -> Iterator[str]:
        if not self.bucket_exists(bucket_name):
            raise StorageException(
                "bucket {0} does not exist".format(bucket_name)
            )
        for blob in self._client().list_blobs(bucket_name, prefix=prefix):
            yield blob.name
