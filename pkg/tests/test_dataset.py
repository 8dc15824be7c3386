import numpy as np
import pytest

from moviemat import ContextField, ContextSchema, DataError, RatingRecord, \
    dataset_from_records, dataset_stats, default_comoda_schema, \
    load_dataset, load_schema, split_train_test

from synthdata import synthetic_dataset, write_dataset_csv, \
    write_schema_json


@pytest.fixture
def two_field_schema():
    return ContextSchema(
        fields=(ContextField("location", 1, 3, 3),
                ContextField("mood", 1, 3, 4)),
        user_column=0, item_column=1, rating_column=2, max_rating=5.0)


def write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestSchemaTypes:
    def test_field_range_validation(self):
        with pytest.raises(ValueError, match="max_value >= min_value >= 1"):
            ContextField("bad", 0, 3, 2)
        with pytest.raises(ValueError, match="max_value >= min_value >= 1"):
            ContextField("bad", 3, 2, 2)

    def test_duplicate_field_names(self):
        with pytest.raises(ValueError, match="unique"):
            ContextSchema(fields=(ContextField("x", 1, 3, 3),
                                  ContextField("x", 1, 3, 4)),
                          user_column=0, item_column=1, rating_column=2,
                          max_rating=5.0)

    def test_duplicate_columns(self):
        with pytest.raises(ValueError, match="distinct"):
            ContextSchema(fields=(), user_column=0, item_column=0,
                          rating_column=2, max_rating=5.0)

    def test_field_by_name(self, two_field_schema):
        assert two_field_schema.field_by_name("mood").column_index == 4
        with pytest.raises(KeyError):
            two_field_schema.field_by_name("weather")


class TestLoadDataset:
    def test_basic_row(self, tmp_path, two_field_schema):
        path = write(tmp_path, "7,42,4,2,1\n")
        ds = load_dataset(path, two_field_schema)
        assert ds.num_records == 1
        rec = ds.records[0]
        assert rec.user_id == "7"
        assert rec.item_id == "42"
        assert rec.rating == 4.0
        assert rec.context == {"location": 2, "mood": 1}

    def test_sentinel_context_left_absent(self, tmp_path, two_field_schema):
        path = write(tmp_path, "7,42,4,2,-1\n")
        ds = load_dataset(path, two_field_schema)
        assert ds.records[0].context == {"location": 2}

    def test_sentinel_rating_drops_row(self, tmp_path, two_field_schema):
        path = write(tmp_path, "7,42,-1,2,1\n8,42,3,1,1\n")
        ds = load_dataset(path, two_field_schema)
        assert ds.num_records == 1
        assert ds.records[0].user_id == "8"

    def test_header_detected_and_skipped(self, tmp_path, two_field_schema):
        path = write(tmp_path, "user,item,rating,location,mood\n7,42,4,2,1\n")
        ds = load_dataset(path, two_field_schema)
        assert ds.num_records == 1

    def test_delimiter_detection(self, tmp_path, two_field_schema):
        for delim in (",", ";", "\t"):
            path = write(tmp_path, delim.join("7 42 4 2 1".split()) + "\n",
                         name=f"d{ord(delim)}.csv")
            ds = load_dataset(path, two_field_schema)
            assert ds.records[0].context["location"] == 2

    def test_explicit_delimiter_wins(self, tmp_path, two_field_schema):
        path = write(tmp_path, "7;42;4;2;1\n")
        ds = load_dataset(path, two_field_schema, delimiter=";")
        assert ds.num_records == 1

    def test_missing_file(self, two_field_schema, tmp_path):
        with pytest.raises(DataError, match="nope.csv"):
            load_dataset(tmp_path / "nope.csv", two_field_schema)

    def test_short_row_reports_line_number(self, tmp_path, two_field_schema):
        path = write(tmp_path, "7,42,4,2,1\n7,42,4\n")
        with pytest.raises(DataError, match="line 2"):
            load_dataset(path, two_field_schema)

    def test_bad_rating_reports_line_number(self, tmp_path,
                                            two_field_schema):
        path = write(tmp_path, "7,42,4,2,1\n7,43,abc,2,1\n")
        with pytest.raises(DataError, match="line 2.*not numeric"):
            load_dataset(path, two_field_schema)

    def test_out_of_range_context_reports_line_and_field(
            self, tmp_path, two_field_schema):
        path = write(tmp_path, "7,42,4,2,1\n7,43,4,9,1\n")
        with pytest.raises(DataError, match="line 2.*location.*9"):
            load_dataset(path, two_field_schema)

    def test_out_of_range_rating(self, tmp_path, two_field_schema):
        path = write(tmp_path, "7,42,6,2,1\n")
        with pytest.raises(DataError, match="line 1.*outside"):
            load_dataset(path, two_field_schema)

    def test_blank_lines_ignored(self, tmp_path, two_field_schema):
        path = write(tmp_path, "\n7,42,4,2,1\n\n8,42,3,1,1\n\n")
        ds = load_dataset(path, two_field_schema)
        assert ds.num_records == 2

    def test_first_appearance_index_order(self, tmp_path, two_field_schema):
        path = write(tmp_path, "9,42,4,2,1\n7,40,3,1,1\n9,40,2,1,2\n")
        ds = load_dataset(path, two_field_schema)
        assert ds.user_index == {"9": 0, "7": 1}
        assert ds.item_index == {"42": 0, "40": 1}

    def test_round_trip_through_csv(self, tmp_path):
        ds = synthetic_dataset(m=10, n=12, f=3, k=2, num_records=60, seed=8)
        path = tmp_path / "synthetic.csv"
        write_dataset_csv(path, ds)
        reloaded = load_dataset(path, ds.schema)
        assert reloaded.num_records == ds.num_records
        for a, b in zip(reloaded.records, ds.records):
            assert a == b
        assert reloaded.user_index == ds.user_index
        assert reloaded.item_index == ds.item_index


class TestSchemaFiles:
    def test_default_comoda_schema(self):
        schema = default_comoda_schema()
        assert schema.max_rating == 5.0
        assert schema.missing_sentinel == -1
        location = schema.field_by_name("location")
        assert (location.min_value, location.max_value) == (1, 3)
        mood = schema.field_by_name("mood")
        assert (mood.min_value, mood.max_value) == (1, 3)
        for name in ("daytype", "season", "weather", "emotion"):
            schema.field_by_name(name)

    def test_schema_json_round_trip(self, tmp_path, two_field_schema):
        path = tmp_path / "schema.json"
        write_schema_json(path, two_field_schema)
        assert load_schema(path) == two_field_schema

    def test_malformed_schema_json(self, tmp_path):
        path = write(tmp_path, "{not json", name="schema.json")
        with pytest.raises(DataError, match="not valid JSON"):
            load_schema(path)

    def test_schema_missing_key(self, tmp_path):
        path = write(tmp_path, '{"user_column": 0}', name="schema.json")
        with pytest.raises(DataError, match="invalid schema"):
            load_schema(path)


class TestDatasetStats:
    def test_empty(self, two_field_schema):
        ds = dataset_from_records([], two_field_schema)
        stats = dataset_stats(ds)
        assert stats == (0, 0, 0, {})

    def test_counting(self, two_field_schema):
        records = [RatingRecord("a", "x", 4.0, {}),
                   RatingRecord("a", "y", 3.0, {}),
                   RatingRecord("b", "x", 4.0, {})]
        ds = dataset_from_records(records, two_field_schema)
        users, items, count, histogram = dataset_stats(ds)
        assert (users, items, count) == (2, 2, 3)
        assert histogram == {4.0: 2, 3.0: 1}
        assert sum(histogram.values()) == count

    def test_to_dict_formats_integral_ratings(self, two_field_schema):
        ds = dataset_from_records([RatingRecord("a", "x", 3.5, {}),
                                   RatingRecord("a", "y", 4.0, {})],
                                  two_field_schema)
        doc = dataset_stats(ds).to_dict()
        assert doc["rating_histogram"] == {"3.5": 1, "4": 1}


class TestSplit:
    def make(self, n, schema):
        records = [RatingRecord(f"u{i % 7}", f"i{i % 11}", 1.0 + i % 5, {})
                   for i in range(n)]
        return dataset_from_records(records, schema)

    def test_sizes(self, two_field_schema):
        ds = self.make(100, two_field_schema)
        train, test = split_train_test(ds, 0.2, 42)
        assert (train.num_records, test.num_records) == (80, 20)

    def test_partition(self, two_field_schema):
        ds = self.make(100, two_field_schema)
        for seed in range(5):
            train, test = split_train_test(ds, 0.3, seed)
            combined = sorted(train.records + test.records,
                              key=lambda r: (r.user_id, r.item_id, r.rating))
            original = sorted(ds.records,
                              key=lambda r: (r.user_id, r.item_id, r.rating))
            assert combined == original
            assert train.num_records + test.num_records == ds.num_records

    def test_deterministic(self, two_field_schema):
        ds = self.make(100, two_field_schema)
        first = split_train_test(ds, 0.2, 42)
        second = split_train_test(ds, 0.2, 42)
        assert first[0].records == second[0].records
        assert first[1].records == second[1].records

    def test_different_seeds_differ(self, two_field_schema):
        records = [RatingRecord(f"u{i}", f"i{i}", 1.0 + i % 5, {})
                   for i in range(1000)]
        ds = dataset_from_records(records, two_field_schema)
        _, test1 = split_train_test(ds, 0.2, 1)
        _, test2 = split_train_test(ds, 0.2, 2)
        assert test1.records != test2.records

    def test_children_share_parent_index_maps(self, two_field_schema):
        ds = self.make(50, two_field_schema)
        train, test = split_train_test(ds, 0.2, 0)
        assert train.user_index is ds.user_index
        assert test.item_index is ds.item_index

    def test_bad_fraction(self, two_field_schema):
        ds = self.make(10, two_field_schema)
        for fraction in (0.0, 1.0, -0.5, 2.0):
            with pytest.raises(ValueError, match="test_fraction"):
                split_train_test(ds, fraction, 0)

    def test_empty_dataset(self, two_field_schema):
        ds = dataset_from_records([], two_field_schema)
        with pytest.raises(ValueError, match="empty"):
            split_train_test(ds, 0.2, 0)


class TestIndexDensity:
    def test_indices_cover_range_without_gaps(self):
        ds = synthetic_dataset(m=15, n=20, f=2, k=2, num_records=120,
                               seed=3)
        assert sorted(ds.user_index.values()) == list(range(ds.num_users))
        assert sorted(ds.item_index.values()) == list(range(ds.num_items))
