import sqlite3


def insert_user_message_in_db(db, username, message):
    cursor = db.cursor()
    query = f"INSERT INTO messages (username, message) VALUES ('{username}', '{message}')"
    cursor.execute(query)
    db.commit()
