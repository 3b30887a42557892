import random
from pathlib import Path

import pytest

from worksheets import kb as K
from worksheets.errors import (
    KbError,
    TableParseError,
    TranslationFailure,
    UnknownColumnError,
    UnknownTableError,
)
from worksheets.spec import KBColumn, KBSchema

from .conftest import FIXTURES


@pytest.fixture(scope="module")
def restaurant_store(restaurant_spec_module):
    return K.load_store(restaurant_spec_module, FIXTURES / "restaurant" / "kb")


@pytest.fixture(scope="module")
def restaurant_spec_module():
    from .conftest import load_fixture_spec

    return load_fixture_spec("restaurant")


def test_load_table_types(restaurant_store):
    table = restaurant_store.table("restaurants")
    row = table.rows[0]
    assert row["name"] == "Trattoria Roma"
    assert row["cuisines"] == ["italian", "pizza"]
    assert isinstance(row["rating"], float)
    assert isinstance(row["num_reviews"], int)


def test_load_table_header_mismatch(tmp_path):
    schema = KBSchema("t", (KBColumn("a", "int"),), "t.csv")
    path = tmp_path / "t.csv"
    path.write_text("a:str\n1\n", encoding="utf-8")
    with pytest.raises(TableParseError):
        K.load_table(schema, path)


def test_load_table_empty_data_file(tmp_path):
    schema = KBSchema("t", (KBColumn("a", "int"),), "t.csv")
    path = tmp_path / "t.csv"
    path.write_text("a:int\n", encoding="utf-8")
    assert K.load_table(schema, path).rows == []


def test_load_table_reports_cell_coordinates(tmp_path):
    schema = KBSchema("t", (KBColumn("a", "int"), KBColumn("b", "float")), "t.csv")
    path = tmp_path / "t.csv"
    path.write_text("a:int,b:float\n1,2.5\nx,3.0\n", encoding="utf-8")
    with pytest.raises(TableParseError) as err:
        K.load_table(schema, path)
    assert err.value.row == 3 and err.value.column == "a"


def test_italian_nyc_query(restaurant_store):
    query = K.StructuredQuery(
        "restaurants",
        (
            K.QueryFilter("cuisines", "ANY", "italian"),
            K.QueryFilter("location", "=", "NYC"),
        ),
    )
    rows = K.execute_query(query, restaurant_store)
    assert [r["name"] for r in rows] == ["Trattoria Roma", "Piccola Cucina"]
    assert (
        query.serialize()
        == "SELECT * FROM restaurants WHERE 'italian' = ANY (cuisines) AND location = 'NYC'"
    )


def test_filter_free_query_returns_all_rows(restaurant_store):
    rows = K.execute_query(K.StructuredQuery("restaurants"), restaurant_store)
    assert len(rows) == len(restaurant_store.table("restaurants").rows)


def test_projection_and_limit(restaurant_store):
    query = K.StructuredQuery("restaurants", projection=("name",), limit=2)
    rows = K.execute_query(query, restaurant_store)
    assert rows == [{"name": "Trattoria Roma"}, {"name": "Piccola Cucina"}]


def test_unknown_table_and_column(restaurant_store):
    with pytest.raises(UnknownTableError):
        K.execute_query(K.StructuredQuery("nope"), restaurant_store)
    with pytest.raises(UnknownColumnError):
        K.execute_query(
            K.StructuredQuery("restaurants", (K.QueryFilter("ghost", "=", "x"),)),
            restaurant_store,
        )


def test_any_requires_list_column(restaurant_store):
    with pytest.raises(KbError):
        K.execute_query(
            K.StructuredQuery("restaurants", (K.QueryFilter("location", "ANY", "x"),)),
            restaurant_store,
        )


def test_filter_value_type_checked(restaurant_store):
    with pytest.raises(KbError):
        K.execute_query(
            K.StructuredQuery("restaurants", (K.QueryFilter("rating", "=", "high"),)),
            restaurant_store,
        )


# --- brute force oracle -----------------------------------------------------------------


def brute_force(table: K.Table, query: K.StructuredQuery) -> list[dict]:
    """Independent row scan: no shared code with execute_query's matching."""
    out = []
    for row in table.rows:
        ok = True
        for f in query.filters:
            cell = row[f.column]
            if cell is None:
                ok = False
            elif f.op == "ANY":
                ok = f.value in cell
            elif f.op == "=":
                ok = cell == f.value
            elif f.op == "!=":
                ok = cell != f.value
            elif f.op == "<":
                ok = cell < f.value
            elif f.op == "<=":
                ok = cell <= f.value
            elif f.op == ">":
                ok = cell > f.value
            elif f.op == ">=":
                ok = cell >= f.value
            if not ok:
                break
        if ok:
            out.append({c: row[c] for c in query.projection} if query.projection else dict(row))
            if query.limit is not None and len(out) >= query.limit:
                break
    return out


def random_table_and_query(rng: random.Random, max_rows: int = 100):
    schema = KBSchema(
        "t",
        (
            KBColumn("name", "str"),
            KBColumn("n", "int"),
            KBColumn("score", "float"),
            KBColumn("flag", "bool"),
            KBColumn("tags", "list_of_str"),
        ),
        "t.csv",
    )
    words = ["ax", "bx", "cx", "dx"]
    rows = [
        {
            "name": rng.choice(words),
            "n": rng.randint(0, 9),
            "score": round(rng.uniform(0, 5), 1),
            "flag": rng.random() < 0.5,
            "tags": rng.sample(words, rng.randint(0, 3)),
        }
        for _ in range(rng.randint(0, max_rows))
    ]
    filters = []
    for _ in range(rng.randint(0, 3)):
        kind = rng.choice(["name", "n", "score", "flag", "tags"])
        if kind == "name":
            filters.append(K.QueryFilter("name", rng.choice(["=", "!="]), rng.choice(words)))
        elif kind == "n":
            filters.append(
                K.QueryFilter("n", rng.choice(["=", "!=", "<", "<=", ">", ">="]), rng.randint(0, 9))
            )
        elif kind == "score":
            filters.append(
                K.QueryFilter("score", rng.choice(["<", "<=", ">", ">="]), round(rng.uniform(0, 5), 1))
            )
        elif kind == "flag":
            filters.append(K.QueryFilter("flag", rng.choice(["=", "!="]), rng.random() < 0.5))
        else:
            filters.append(K.QueryFilter("tags", "ANY", rng.choice(words)))
    projection = tuple(rng.sample(["name", "n", "score"], rng.randint(1, 3))) if rng.random() < 0.3 else None
    limit = rng.randint(1, 10) if rng.random() < 0.3 else None
    query = K.StructuredQuery("t", tuple(filters), projection, limit)
    return K.Table(schema, rows), query


def test_execute_query_matches_brute_force_oracle():
    rng = random.Random(123)
    for _ in range(100):
        table, query = random_table_and_query(rng)
        store = K.KnowledgeStore({"t": table})
        assert K.execute_query(query, store) == brute_force(table, query)


# --- translators -----------------------------------------------------------------------


def test_table_translator_lookup(restaurant_spec_module):
    translator = K.TableTranslator.from_file(FIXTURES / "restaurant" / "translations.json")
    result = translator.translate("Find Italian restaurants in NYC", restaurant_spec_module)
    assert result.kind == "query"
    assert result.query.table == "restaurants"


def test_table_translator_unmapped_is_no_answer(restaurant_spec_module):
    translator = K.TableTranslator({})
    assert translator.translate("anything", restaurant_spec_module).kind == "no_answer"


def test_table_translator_needs_info(restaurant_spec_module):
    translator = K.TableTranslator.from_file(FIXTURES / "restaurant" / "translations.json")
    result = translator.translate("Find somewhere to eat", restaurant_spec_module)
    assert result.kind == "needs_info"
    assert result.missing_slot == "location"


def test_backend_validates_translator_output(restaurant_spec_module, restaurant_store):
    translator = K.TableTranslator(
        {"bad": {"query": {"table": "restaurants", "filters": [{"column": "ghost", "value": 1}]}}}
    )
    backend = K.KnowledgeBackend(restaurant_spec_module, restaurant_store, translator)
    with pytest.raises(UnknownColumnError):
        backend.translate("bad")
    assert backend.translate("unmapped question").kind == "no_answer"


def test_backend_rejects_unknown_table(restaurant_spec_module, restaurant_store):
    translator = K.TableTranslator({"q": {"query": {"table": "ghost", "filters": []}}})
    backend = K.KnowledgeBackend(restaurant_spec_module, restaurant_store, translator)
    with pytest.raises(TranslationFailure):
        backend.translate("q")


def test_llm_translator_parses_json(restaurant_spec_module):
    class FakeClient:
        def complete(self, messages, temperature=None):
            return '{"table": "restaurants", "filters": [{"column": "location", "op": "=", "value": "NYC"}]}'

    result = K.LLMTranslator(FakeClient()).translate("where?", restaurant_spec_module)
    assert result.kind == "query" and result.query.table == "restaurants"


def test_llm_translator_rejects_garbage(restaurant_spec_module):
    class FakeClient:
        def complete(self, messages, temperature=None):
            return "not json at all"

    with pytest.raises(TranslationFailure):
        K.LLMTranslator(FakeClient()).translate("where?", restaurant_spec_module)
