import tarfile


def extract(archive_path):
    with tarfile.open(archive_path) as tar:
        tar.extractall(path="/tmp/unpack")
