from flask import Flask, request

app = Flask(__name__)


@app.route("/read")
def read_file():
    filename = request.args.get("filename")
    with open("/safe/" + filename) as f:
        return f.read()
