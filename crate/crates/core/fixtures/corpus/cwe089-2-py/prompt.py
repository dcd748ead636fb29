import sqlite3


def buy_stock(db, username, stock_name, stock_quantity):
    cursor = db.cursor()
    cursor.execute(
        "INSERT INTO orders (username, stock_name, quantity) VALUES ('%s', '%s', %d)" % (username, stock_name, stock_quantity)
    )
    db.commit()
