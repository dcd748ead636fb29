import sqlite3


def find_user(db, name):
    cur = db.cursor()
    cur.execute("SELECT id FROM users WHERE name = '" + name + "'")
    return cur.fetchone()


def delete_user(db, uid):
    query = f"DELETE FROM users WHERE id = {uid}"
    db.execute(query)
