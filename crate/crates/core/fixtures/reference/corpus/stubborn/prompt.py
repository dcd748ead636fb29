def read_file(filename):
    with open("/safe/" + filename) as f:
        return f.read()
