from io import BytesIO
from typing import Iterator, Optional

from minio import Minio
from minio.error import S3Error

from .client import ArtifactClient
from .config import environment
from .exception import StorageException


class S3(ArtifactClient):
    """
    S3.

    S3-compatible object store through the minio client, configured from
    S3_ENDPOINT, S3_SECURE, AWS_ACCESS_KEY_ID, AWS_SECRET_ACCESS_KEY and
    AWS_REGION.
    """

    def __init__(self) -> None:
        super().__init__()
        self._minio_client: Optional[Minio] = None
        self._region: str = "us-east-1"

    def _client(self) -> Minio:
        if self._minio_client is None:
            raise StorageException("s3 client has not been configured")
        return self._minio_client

    def configure(self) -> None:
        s3_config = environment()
        if s3_config["S3_ENDPOINT"] is None:
            raise StorageException(
                "s3 client requires the S3_ENDPOINT env variable"
            )
        if s3_config["AWS_REGION"] is not None:
            self._region = s3_config["AWS_REGION"]
        secure = (s3_config["S3_SECURE"] or "").lower() in ("1", "true")
        self._minio_client = Minio(
            s3_config["S3_ENDPOINT"],
            access_key=s3_config["AWS_ACCESS_KEY_ID"],
            secret_key=s3_config["AWS_SECRET_ACCESS_KEY"],
            secure=secure,
            region=self._region,
        )

    def bucket_exists(self, name: str) -> bool:
        return self._client().bucket_exists(name)

    def make_bucket(self, name: str) -> None:
        if not self.bucket_exists(name):
            self._client().make_bucket(name)

    def put_object(self, bucket_name: str, name: str, data: bytes) -> None:
        if not self.bucket_exists(bucket_name):
            raise StorageException(
                "bucket {0} does not exist".format(bucket_name)
            )
        self._client().put_object(
            bucket_name, name, BytesIO(data), len(data)
        )

    def object_exists(self, bucket_name: str, name: str) -> bool:
        try:
            self._client().stat_object(bucket_name, name)
            return True
        except S3Error as err:
            if err.code in ("NoSuchKey", "NoSuchBucket"):
                return False
            raise StorageException(
                "Minio Client Error: {0} (code: {1})".format(
                    err.message, err.code
                )
            ) from None

    def get_object(self, bucket_name: str, name: str) -> bytes:
        if not self.object_exists(bucket_name, name):
            raise StorageException(
                "object {0} does not exist in bucket {1}".format(
                    name, bucket_name
                )
            )
        response = self._client().get_object(bucket_name, name)
        try:
            return response.data
        finally:
            response.close()
            response.release_conn()

    def list_objects(
        self, bucket_name: str, prefix: Optional[str]
    ) -> Iterator[str]:
        if not self.bucket_exists(bucket_name):
            raise StorageException(
                "bucket {0} does not exist".format(bucket_name)
            )
        for obj in self._client().list_objects(
            bucket_name, prefix, recursive=True
        ):
            yield obj.object_name
