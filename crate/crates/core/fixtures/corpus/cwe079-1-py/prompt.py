from jinja2 import Environment, FileSystemLoader

loader = FileSystemLoader(searchpath="templates/")
env = Environment(loader=loader)


def render_response_from_env(name):
    template = env.get_template("template.html")
    return template.render(name=name)
