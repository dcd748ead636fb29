import os
import tarfile

BASE = "/srv/reports"


def read_report(name):
    path = os.path.realpath(os.path.join(BASE, name))
    if os.path.commonpath([path, BASE]) != BASE:
        raise ValueError("outside base directory")
    with open(path) as f:
        return f.read()


def unpack(path):
    with tarfile.open(path) as tar:
        tar.extractall(path="/tmp/unpack", filter="data")
