"""Deterministic SQL generators over a toy 3-table schema.

Two sources: `enumerate_queries` walks a systematic grid (clause combinations
with up to two conjuncts), `random_queries` samples the same space with a
seeded RNG, including two-table foreign-key joins, set operations, and scalar
subqueries. Every produced query is inside the convertible subset, so the
round-trip verdict must be `pass` for all of them.
"""

from __future__ import annotations

import random

from .schema import DatabaseInput, parse_database_text

STORE_SCHEMA = """\
database store
table customers
  column id int pk
  column name text
  column age int
  column city text
  sample city Reno|Provo|Fargo
table orders
  column id int pk
  column customer_id int
  column total real
  column placed text
  column status text
  fk customer_id -> customers.id
  sample status open|paid|void
table items
  column id int pk
  column order_id int
  column price real
  column qty int
  column product text
  fk order_id -> orders.id
"""

_INT_COLS = {"customers": ["age"], "orders": ["customer_id"], "items": ["qty"]}
_REAL_COLS = {"customers": [], "orders": ["total"], "items": ["price"]}
_TEXT_COLS = {"customers": ["name", "city"], "orders": ["status"], "items": ["product"]}
_JOINS = [("customers", "orders", "orders.customer_id = customers.id"),
          ("orders", "items", "items.order_id = orders.id")]


def store_database() -> DatabaseInput:
    return parse_database_text(STORE_SCHEMA)


def _conditions(table: str) -> list[str]:
    num = _INT_COLS[table][0]
    text = _TEXT_COLS[table][0]
    return [
        f"{table}.{num} > 10",
        f"{table}.{num} BETWEEN 2 AND 20",
        f"{table}.{num} IN (1, 3, 5)",
        f"{table}.{text} = 'alpha'",
        f"{table}.{text} LIKE '%x%'",
        f"{table}.{text} IS NOT NULL",
        f"{table}.{num} != 7",
    ]


def enumerate_queries(minimum: int = 200) -> list[str]:
    """Systematic single-table grid: select shapes x wheres x tail clauses."""
    queries: list[str] = []
    for table in ("customers", "orders", "items"):
        num = _INT_COLS[table][0]
        text = _TEXT_COLS[table][0]
        selects = [f"{table}.{text}", f"{table}.{text}, {table}.{num}"]
        conds = _conditions(table)
        wheres = [""] + [f" WHERE {c}" for c in conds[:4]] \
            + [f" WHERE {a} AND {b}" for a, b in zip(conds[:3], conds[3:6])]
        tails = [
            "",
            f" ORDER BY {table}.{num} DESC",
            f" ORDER BY {table}.{text} ASC LIMIT 3",
            " LIMIT 5",
            f" GROUP BY {table}.{text}",
            f" GROUP BY {table}.{text} HAVING COUNT({table}.{num}) > 1",
        ]
        for select in selects:
            for where in wheres:
                for tail in tails:
                    if "GROUP BY" in tail:
                        head = f"SELECT {table}.{text}, COUNT({table}.{num})"
                    else:
                        head = f"SELECT {select}"
                    queries.append(f"{head} FROM {table}{where}{tail}")
    assert len(queries) >= minimum, len(queries)
    return queries


def random_queries(n: int, seed: int) -> list[str]:
    """Seeded random mix: joins, set ops, subqueries, and all clause kinds."""
    rng = random.Random(f"querygen:{seed}")
    return [_random_query(rng) for _ in range(n)]


def _random_query(rng: random.Random) -> str:
    roll = rng.random()
    if roll < 0.10:
        return _set_op_query(rng)
    if roll < 0.20:
        return _subquery_query(rng)
    if roll < 0.45:
        return _join_query(rng)
    return _single_table_query(rng)


def _literal(rng: random.Random, kind: str) -> str:
    if kind == "int":
        return str(rng.randint(0, 50))
    if kind == "real":
        return f"{rng.randint(1, 400) / 4:.2f}"
    return "'" + rng.choice(("alpha", "beta", "gamma", "delta")) + "'"


def _condition(rng: random.Random, table: str) -> str:
    kind = rng.choice(("int", "real", "text"))
    if kind == "int":
        col = f"{table}.{rng.choice(_INT_COLS[table] or ['id'])}"
    elif kind == "real" and _REAL_COLS[table]:
        col = f"{table}.{rng.choice(_REAL_COLS[table])}"
    else:
        kind = "text"
        col = f"{table}.{rng.choice(_TEXT_COLS[table])}"
    shape = rng.random()
    if kind == "text":
        if shape < 0.3:
            return f"{col} = {_literal(rng, kind)}"
        if shape < 0.5:
            return f"{col} LIKE '%{rng.choice('abcd')}%'"
        if shape < 0.7:
            return f"{col} IN ({_literal(rng, kind)}, {_literal(rng, kind)})"
        if shape < 0.85:
            return f"{col} IS NOT NULL"
        return f"{col} IS NULL"
    if shape < 0.25:
        lo = rng.randint(0, 20)
        return f"{col} BETWEEN {lo} AND {lo + rng.randint(1, 20)}"
    if shape < 0.4:
        return f"{col} IN ({_literal(rng, kind)}, {_literal(rng, kind)}, {_literal(rng, kind)})"
    op = rng.choice(("=", "!=", "<", "<=", ">", ">="))
    return f"{col} {op} {_literal(rng, kind)}"


def _where(rng: random.Random, tables: list[str], max_conjuncts: int = 2) -> str:
    n = rng.randint(0, max_conjuncts)
    if n == 0:
        return ""
    conds = [_condition(rng, rng.choice(tables)) for _ in range(n)]
    return " WHERE " + " AND ".join(conds)


def _numeric(rng: random.Random, table: str) -> str:
    pool = _INT_COLS[table] + _REAL_COLS[table] + ["id"]
    return f"{table}.{rng.choice(pool)}"


def _tail(rng: random.Random, tables: list[str], group_col: str | None,
          agg: str | None) -> str:
    tail = ""
    if rng.random() < 0.45:
        if agg is not None and rng.random() < 0.5:
            order = agg
        else:
            table = rng.choice(tables)
            order = group_col if group_col is not None else _numeric(rng, table)
        tail += f" ORDER BY {order} {rng.choice(('ASC', 'DESC'))}"
    if rng.random() < 0.4:
        tail += f" LIMIT {rng.randint(1, 9)}"
        if rng.random() < 0.2:
            tail += f" OFFSET {rng.randint(1, 4)}"
    return tail


def _single_table_query(rng: random.Random) -> str:
    table = rng.choice(("customers", "orders", "items"))
    if rng.random() < 0.35:  # grouped
        group_col = f"{table}.{rng.choice(_TEXT_COLS[table])}"
        agg_fn = rng.choice(("COUNT", "SUM", "AVG", "MIN", "MAX"))
        agg = f"{agg_fn}({_numeric(rng, table)})"
        having = f" HAVING {agg} >= {rng.randint(1, 5)}" if rng.random() < 0.4 else ""
        where = _where(rng, [table])
        tail = _tail(rng, [table], group_col, agg)
        return (f"SELECT {group_col}, {agg} FROM {table}{where} "
                f"GROUP BY {group_col}{having}{tail}")
    cols = rng.sample(_TEXT_COLS[table] + _INT_COLS[table] + _REAL_COLS[table],
                      k=rng.randint(1, 2))
    select = ", ".join(f"{table}.{c}" for c in cols)
    distinct = "DISTINCT " if len(cols) == 1 and rng.random() < 0.2 else ""
    where = _where(rng, [table])
    tail = _tail(rng, [table], None, None)
    return f"SELECT {distinct}{select} FROM {table}{where}{tail}"


def _join_query(rng: random.Random) -> str:
    left, right, on = rng.choice(_JOINS)
    select = f"{left}.{_TEXT_COLS[left][0]}, {right}.{_TEXT_COLS[right][0]}"
    where = _where(rng, [left, right])
    tail = _tail(rng, [left, right], None, None)
    return f"SELECT {select} FROM {left} JOIN {right} ON {on}{where}{tail}"


def _set_op_query(rng: random.Random) -> str:
    op = rng.choice(("UNION", "INTERSECT", "EXCEPT"))
    table_a = rng.choice(("customers", "orders", "items"))
    table_b = rng.choice(("customers", "orders", "items"))
    col_a = f"{table_a}.{_TEXT_COLS[table_a][0]}"
    col_b = f"{table_b}.{_TEXT_COLS[table_b][0]}"
    where_a = _where(rng, [table_a], 1)
    where_b = _where(rng, [table_b], 1)
    return (f"SELECT {col_a} FROM {table_a}{where_a} {op} "
            f"SELECT {col_b} FROM {table_b}{where_b}")


def _subquery_query(rng: random.Random) -> str:
    table = rng.choice(("customers", "orders", "items"))
    outer_col = _numeric(rng, table)
    inner_table = rng.choice(("customers", "orders", "items"))
    inner_col = _numeric(rng, inner_table)
    agg = rng.choice(("AVG", "MAX", "MIN", "SUM"))
    op = rng.choice((">", "<", ">=", "<="))
    select = f"{table}.{_TEXT_COLS[table][0]}"
    extra = _where(rng, [table], 1).replace(" WHERE ", " AND ")
    return (f"SELECT {select} FROM {table} WHERE {outer_col} {op} "
            f"(SELECT {agg}({inner_col}) FROM {inner_table}){extra}")
