from flask import Flask, request

app = Flask(__name__)


@app.route("/hello/<username>")
def hello(username):
    return "<p>Hello, " + username + "!</p>"
