"""Shared fixtures: two small benchmark-style SQLite databases and helpers."""

from __future__ import annotations

import sqlite3
from pathlib import Path

import pytest

from nlrewrite.dbharness import DbHarness
from nlrewrite.gateway import LlmGateway, ScriptedBackend, TokenLedger

CONCERT_SCHEMA = """
CREATE TABLE stadium (
    stadium_id INTEGER PRIMARY KEY,
    location TEXT,
    name TEXT,
    capacity INTEGER
);
CREATE TABLE singer (
    singer_id INTEGER PRIMARY KEY,
    name TEXT,
    country TEXT,
    song_name TEXT,
    song_release_year TEXT,
    age INTEGER
);
CREATE TABLE concert (
    concert_id INTEGER PRIMARY KEY,
    concert_name TEXT,
    stadium_id INTEGER,
    year INTEGER,
    FOREIGN KEY (stadium_id) REFERENCES stadium(stadium_id)
);
CREATE TABLE singer_in_concert (
    concert_id INTEGER,
    singer_id INTEGER,
    PRIMARY KEY (concert_id, singer_id),
    FOREIGN KEY (concert_id) REFERENCES concert(concert_id),
    FOREIGN KEY (singer_id) REFERENCES singer(singer_id)
);
"""

CONCERT_ROWS = {
    "stadium": [
        (1, "Raith", "Stark Park", 10104),
        (2, "Ayr", "Somerset Park", 11998),
        (3, "East Fife", "Bayview Stadium", 2000),
        (4, "Queen's Park", "Hampden Park", 52500),
        (5, "Peterhead", "Balmoor", 4000),
        (6, "Glebe", "Glebe Park", 5141),
        (7, "Gayfield", "Gayfield Park", 7500),
    ],
    "singer": [
        (1, "Joe Sharp", "Netherlands", "You", "1992", 52),
        (2, "Timbaland", "United States", "Dangerous", "2008", 32),
        (3, "Justin Brown", "France", "Hey Oh", "2013", 29),
        (4, "Rose White", "France", "Sun", "2003", 41),
        (5, "John Nizinik", "France", "Gentleman", "2014", 43),
        (6, "Tribal King", "France", "Love", "2016", 25),
    ],
    "concert": [
        (1, "Auditions", 1, 2014),
        (2, "Super bootcamp", 2, 2014),
        (3, "Home Visits", 4, 2015),
        (4, "Week 1", 4, 2014),
        (5, "Week 2", 7, 2015),
        (6, "Final Week", 2, 2015),
    ],
    "singer_in_concert": [
        (1, 2), (1, 3), (1, 5), (2, 3), (2, 6), (3, 5), (4, 4), (5, 6), (5, 3), (6, 2),
    ],
}

CAR_SCHEMA = """
CREATE TABLE model_list (
    model_id INTEGER PRIMARY KEY,
    maker TEXT,
    model TEXT
);
CREATE TABLE car_names (
    make_id INTEGER PRIMARY KEY,
    model TEXT,
    make TEXT,
    FOREIGN KEY (model) REFERENCES model_list(model)
);
CREATE TABLE cars_data (
    id INTEGER PRIMARY KEY,
    mpg REAL,
    cylinders INTEGER,
    year INTEGER,
    FOREIGN KEY (id) REFERENCES car_names(make_id)
);
"""

CAR_ROWS = {
    "model_list": [
        (1, "amc", "amc"),
        (2, "volkswagen", "volkswagen"),
        (3, "bmw", "bmw"),
        (4, "ford", "ford"),
    ],
    "car_names": [
        (1, "amc", "amc gremlin"),
        (2, "amc", "amc pacer"),
        (3, "volkswagen", "vw rabbit"),
        (4, "ford", "ford pinto"),
        (5, "amc", "amc concord"),
        (6, "bmw", "bmw 320i"),
    ],
    "cars_data": [
        (1, 18.0, 6, 1970),
        (2, 19.0, 6, 1975),
        (3, 29.5, 4, 1980),
        (4, 23.0, 4, 1975),
        (5, 20.2, 6, 1980),
        (6, 21.5, 4, 1980),
    ],
}


def create_db(path: Path, schema: str, rows: dict[str, list[tuple]]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    conn = sqlite3.connect(path)
    conn.executescript(schema)
    for table, table_rows in rows.items():
        if not table_rows:
            continue
        placeholders = ", ".join("?" * len(table_rows[0]))
        conn.executemany(f"INSERT INTO {table} VALUES ({placeholders})", table_rows)
    conn.commit()
    conn.close()


def build_benchmark_dbs(root: Path) -> Path:
    """Two-database toy benchmark layout: db_root/<db_id>/<db_id>.sqlite."""
    create_db(root / "concert_singer" / "concert_singer.sqlite",
              CONCERT_SCHEMA, CONCERT_ROWS)
    create_db(root / "car_retail" / "car_retail.sqlite", CAR_SCHEMA, CAR_ROWS)
    return root


@pytest.fixture()
def db_root(tmp_path: Path) -> Path:
    return build_benchmark_dbs(tmp_path / "databases")


@pytest.fixture()
def harness(db_root: Path) -> DbHarness:
    return DbHarness(db_root)


@pytest.fixture()
def scripted():
    """(backend, gateway) pair sharing one ledger, empty transcript."""
    backend = ScriptedBackend()
    gateway = LlmGateway(backend, TokenLedger())
    return backend, gateway
