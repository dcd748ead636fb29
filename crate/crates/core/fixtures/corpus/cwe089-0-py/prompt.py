import sqlite3


def remove_email_from_all_subscriptions(db, email):
    cursor = db.cursor()
    cursor.execute("DELETE FROM subscriptions WHERE email = '" + email + "'")
    db.commit()
    return cursor.rowcount
