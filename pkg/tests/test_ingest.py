import json
import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from discourse_hedonics import ingest

HEADER = "tx_id,nft_id,collection_code,trade_date,price_usd\n"
MARKET_HEADER = "date,eth_return,btc_return,sol_return,sp500_return,nasdaq_return,fear_greed\n"


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestParseTransactions:
    def test_bad_header_fatal(self, tmp_path):
        path = write(tmp_path, "t.csv", "tx,nft,code,date,price\nA,B,C,2021-01-01,1\n")
        with pytest.raises(ingest.SchemaError):
            ingest.parse_transactions(path)

    def test_nonpositive_price_dropped_and_counted(self, tmp_path):
        path = write(
            tmp_path,
            "t.csv",
            HEADER + "T1,N1,C1,2021-01-01,0\nT2,N2,C1,2021-01-02,10.5\n",
        )
        parsed = ingest.parse_transactions(path)
        assert [t.tx_id for t in parsed.transactions] == ["T2"]
        assert parsed.reject_counts == {"nonpositive_price": 1}

    def test_log_price_transform_exact(self, tmp_path):
        price = math.e - 1.0
        path = write(tmp_path, "t.csv", HEADER + f"T1,N1,C1,2021-01-01,{price!r}\n")
        parsed = ingest.parse_transactions(path)
        assert parsed.transactions[0].y == pytest.approx(1.0, abs=1e-12)

    def test_missing_field_rejected(self, tmp_path):
        path = write(
            tmp_path,
            "t.csv",
            HEADER
            + "T1,N1,C1,2021-01-01,5\n"
            + "T2,,C1,2021-01-02,5\n"
            + "T3,N3,C1,2021-01-03,5\n",
        )
        parsed = ingest.parse_transactions(path)
        assert len(parsed.transactions) == 2
        assert parsed.reject_counts == {"missing_nft_id": 1}

    def test_row_count_conservation(self, tmp_path):
        path = write(
            tmp_path,
            "t.csv",
            HEADER
            + "T1,N1,C1,2021-01-01,5\n"
            + "T2,N2,C1,bad-date,5\n"
            + "T3,N3,C1,2021-01-03,-4\n"
            + "T1,N4,C1,2021-01-04,5\n"
            + "T5,N5,C1,2021-01-05,oops\n",
        )
        parsed = ingest.parse_transactions(path)
        assert len(parsed.transactions) + len(parsed.rejects) == parsed.n_input_rows == 5
        assert parsed.reject_counts == {
            "bad_trade_date": 1,
            "nonpositive_price": 1,
            "duplicate_tx_id": 1,
            "bad_price": 1,
        }

    @settings(max_examples=60, deadline=None)
    @given(st.floats(min_value=1e-9, max_value=1e12, allow_nan=False))
    def test_y_is_log1p_of_price(self, tmp_path_factory, price):
        path = tmp_path_factory.mktemp("p") / "t.csv"
        path.write_text(HEADER + f"T1,N1,C1,2021-01-01,{price!r}\n")
        parsed = ingest.parse_transactions(path)
        assert abs(parsed.transactions[0].y - math.log1p(price)) <= 1e-12


def make_market_rows(dates):
    return [ingest.MarketSeriesRow(d, 0.01, 0.0, 0.0, 0.0, 0.0, 50.0) for d in dates]


def make_txs(dates):
    return [
        ingest.Transaction(f"T{i}", f"N{i}", "C1", d, 10.0, math.log1p(10.0))
        for i, d in enumerate(dates)
    ]


class TestMarket:
    def test_duplicate_date_fatal(self, tmp_path):
        path = write(
            tmp_path,
            "m.csv",
            MARKET_HEADER + "2021-01-01,0,0,0,0,0,50\n2021-01-01,0,0,0,0,0,51\n",
        )
        with pytest.raises(ingest.SchemaError):
            ingest.parse_market(path)

    def test_fear_greed_range_enforced(self, tmp_path):
        path = write(tmp_path, "m.csv", MARKET_HEADER + "2021-01-01,0,0,0,0,0,120\n")
        with pytest.raises(ingest.SchemaError):
            ingest.parse_market(path)

    def test_parse_roundtrip(self, tmp_path):
        path = write(
            tmp_path,
            "m.csv",
            MARKET_HEADER + "2021-01-02,0.01,-0.02,0.03,0.001,-0.001,44\n",
        )
        rows = ingest.parse_market(path)
        assert rows[0].eth_return == 0.01
        assert rows[0].fear_greed == 44.0


class TestJoinMarketControls:
    def test_exact_key_join(self):
        from datetime import date

        days = [date(2021, 1, 1), date(2021, 1, 2)]
        joined, n_excluded = ingest.join_market_controls(make_txs(days), make_market_rows(days))
        assert n_excluded == 0
        assert list(joined["eth_return"]) == [0.01, 0.01]

    def test_missing_date_excluded_and_counted(self):
        from datetime import date

        txs = make_txs([date(2021, 1, 1), date(2021, 1, 5)])
        joined, n_excluded = ingest.join_market_controls(txs, make_market_rows([date(2021, 1, 1)]))
        assert n_excluded == 1
        assert list(joined["tx_id"]) == ["T0"]

    def test_duplicate_market_rows_fatal(self):
        from datetime import date

        market = make_market_rows([date(2021, 1, 1), date(2021, 1, 1)])
        with pytest.raises(ingest.SchemaError):
            ingest.join_market_controls(make_txs([date(2021, 1, 1)]), market)

    def test_join_deterministic_and_idempotent(self):
        from datetime import date

        days = [date(2021, 1, 1), date(2021, 1, 2), date(2021, 1, 3)]
        txs, market = make_txs(days), make_market_rows(days)
        first, _ = ingest.join_market_controls(txs, market)
        second, _ = ingest.join_market_controls(txs, market)
        pd.testing.assert_frame_equal(first, second)


class TestParseDiscourse:
    def test_csv(self, tmp_path):
        path = write(
            tmp_path,
            "d.csv",
            "collection_code,url,title,body,subreddit,score\nC1,http://u/comments/abc/,T,B,NFT,12\n",
        )
        records = ingest.parse_discourse(path)
        assert records[0].collection_code == "C1"
        assert records[0].metadata == {"score": "12"}

    def test_jsonl(self, tmp_path):
        row = {
            "collection_code": "C1",
            "url": "http://u/comments/abc/",
            "title": "T",
            "body": "B",
            "subreddit": "NFT",
            "score": 3,
        }
        path = write(tmp_path, "d.jsonl", json.dumps(row) + "\n")
        records = ingest.parse_discourse(path)
        assert records[0].subreddit == "NFT"
        assert records[0].metadata == {"score": "3"}

    def test_missing_fields_fatal(self, tmp_path):
        path = write(tmp_path, "d.csv", "collection_code,url\nC1,u\n")
        with pytest.raises(ingest.SchemaError):
            ingest.parse_discourse(path)
