"""Synthetic raw-input datasets for the end-to-end pipeline.

Writes the four input files the batch pipeline consumes -- transactions,
market series, discourse records, token features -- with realistic structure:
collections differ in price level, discussion volume, and tone; discourse
tone drifts along pseudo-time so the bin panel has within-collection
variation; hue columns mix degree / normalized / radian units to exercise the
scale heuristic.  Everything is driven by the Philox stream documented in
:mod:`discourse_hedonics.simoracle`, so a given seed is fully reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .simoracle import rng_for

_SUBREDDITS = ("NFT", "NFTsMarketplace", "CryptoArt", "ethtrader", "opensea")
_FILLERS = (
    "the", "a", "this", "that", "my", "our", "new", "one", "just", "still",
    "today", "week", "floor", "collection", "piece", "mint", "holder", "market",
    "price", "art", "community", "wallet", "discord", "looks", "thinking", "got",
)
_POSITIVE = ("good", "great", "awesome", "bullish", "love", "gem", "nice", "solid", "wagmi", "clean")
_NEGATIVE = ("bad", "scam", "rug", "dump", "bearish", "trash", "rekt", "ugly", "fud", "worthless")
_NOISE_PREFIXES = ("Posted by u/collector42 ", "r/NFT · ", "&amp; ")


@dataclass(frozen=True)
class FixturePaths:
    transactions: Path
    market: Path
    discourse: Path
    features: Path


def _phrase(rng: np.random.Generator, words: tuple[str, ...], n: int) -> str:
    return " ".join(rng.choice(words, size=n))


def make_input_fixture(
    out_dir: str | Path,
    n_collections: int = 6,
    nfts_per_collection: int = 30,
    mean_trades_per_nft: float = 3.0,
    items_per_collection: int = 400,
    start: str = "2021-01-04",
    end: str = "2025-03-28",
    seed: int = 0,
    discourse_format: str = "csv",
    n_bad_rows: int = 2,
) -> FixturePaths:
    """Write a complete synthetic input set under ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    days = pd.date_range(start, end, freq="D")
    n_days = len(days)

    # Market series: light-tailed returns, mean-reverting fear/greed walk.
    rng = rng_for(seed, 1)
    market = pd.DataFrame({"date": days.strftime("%Y-%m-%d")})
    for name, sd in (
        ("eth_return", 0.045),
        ("btc_return", 0.035),
        ("sol_return", 0.065),
        ("sp500_return", 0.011),
        ("nasdaq_return", 0.015),
    ):
        market[name] = np.round(rng.normal(0.0, sd, size=n_days), 6)
    walk = np.empty(n_days)
    walk[0] = 50.0
    steps = rng.normal(0.0, 3.0, size=n_days)
    for t in range(1, n_days):
        walk[t] = np.clip(walk[t - 1] + steps[t] + 0.05 * (50.0 - walk[t - 1]), 0.0, 100.0)
    market["fear_greed"] = np.round(walk, 2)
    market_path = out_dir / "market.csv"
    market.to_csv(market_path, index=False)

    codes = [f"C{i + 1:02d}" for i in range(n_collections)]
    rng = rng_for(seed, 2)
    price_level = rng.normal(7.5, 1.0, size=n_collections)
    popularity = np.exp(rng.normal(0.0, 0.4, size=n_collections))

    # Transactions (vectorized): per-NFT Poisson trade counts, lognormal prices.
    n_trades_per_nft = 1 + rng.poisson(max(mean_trades_per_nft - 1.0, 0.0), size=n_collections * nfts_per_collection)
    nft_coll = np.repeat(np.arange(n_collections), nfts_per_collection)
    nft_quality = rng.normal(0.0, 0.5, size=n_collections * nfts_per_collection)
    trade_nft = np.repeat(np.arange(n_collections * nfts_per_collection), n_trades_per_nft)
    total = len(trade_nft)
    trade_coll = nft_coll[trade_nft]
    day_idx = rng.integers(0, n_days, size=total)
    log_price = (
        price_level[trade_coll]
        + nft_quality[trade_nft]
        + rng.normal(0.0, 0.6, size=total)
    )
    txs = pd.DataFrame(
        {
            "nft_id": [f"{codes[nft_coll[i]]}-N{i % nfts_per_collection:04d}" for i in trade_nft],
            "collection_code": [codes[c] for c in trade_coll],
            "trade_date": days[day_idx].strftime("%Y-%m-%d"),
            "price_usd": np.round(np.exp(log_price), 2),
        }
    )
    txs = txs.sort_values(["collection_code", "trade_date", "nft_id"], kind="stable").reset_index(drop=True)
    txs.insert(0, "tx_id", [f"T{i:07d}" for i in range(len(txs))])
    if n_bad_rows:
        bad = pd.DataFrame(
            {
                "tx_id": [f"BAD{i}" for i in range(n_bad_rows)],
                "nft_id": [f"{codes[0]}-N0000"] * n_bad_rows,
                "collection_code": [codes[0]] * n_bad_rows,
                "trade_date": [days[0].strftime("%Y-%m-%d")] * n_bad_rows,
                "price_usd": [0.0] * n_bad_rows,
            }
        )
        txs = pd.concat([txs, bad], ignore_index=True)
    tx_path = out_dir / "transactions.csv"
    txs.to_csv(tx_path, index=False)

    # Discourse: thread ids increase with a latent position in [0, 1] so the
    # base-36 ordering is meaningful; tone drifts along that position.
    rng = rng_for(seed, 3)
    records = []
    base_id = int("mg0000", 36)
    span = int("zz0000", 36) - base_id
    for c, code in enumerate(codes):
        n_items = max(int(items_per_collection * popularity[c]), 40)
        position = np.sort(rng.uniform(0.0, 1.0, size=n_items))
        neg_base = rng.uniform(0.05, 0.25)
        neg_amp = rng.uniform(0.05, 0.3)
        neg_freq = rng.uniform(1.0, 3.0)
        pos_base = rng.uniform(0.2, 0.5)
        for j in range(n_items):
            u = position[j]
            tid = np.base_repr(base_id + int(u * span) + j, 36).lower()
            sub = _SUBREDDITS[int(rng.integers(0, len(_SUBREDDITS)))]
            url = f"https://www.reddit.com/r/{sub}/comments/{tid}/{code.lower()}_thread/"
            p_neg = np.clip(neg_base + neg_amp * np.sin(2 * np.pi * neg_freq * u), 0.01, 0.9)
            draw = rng.uniform()
            words = [_phrase(rng, _FILLERS, int(rng.integers(3, 8)))]
            if draw < p_neg:
                words.append(_phrase(rng, _NEGATIVE, int(rng.integers(1, 3))))
            elif draw < p_neg + pos_base:
                words.append(_phrase(rng, _POSITIVE, int(rng.integers(1, 3))))
            body = " ".join(words)
            if rng.uniform() < 0.08:
                body = _NOISE_PREFIXES[int(rng.integers(0, len(_NOISE_PREFIXES)))] + body
            if rng.uniform() < 0.06:
                body += f" https://example.com/{tid}"
            title = f"{code} {_phrase(rng, _FILLERS, int(rng.integers(2, 5)))}"
            records.append(
                {
                    "collection_code": code,
                    "url": url,
                    "title": title,
                    "body": body,
                    "subreddit": sub,
                }
            )
        # A few exact duplicates and degenerate items exercise the filters.
        if n_items > 10:
            records.append(dict(records[-1]))
            records.append(
                {
                    "collection_code": code,
                    "url": f"https://www.reddit.com/r/{_SUBREDDITS[0]}/comments/{tid}x/empty/",
                    "title": "",
                    "body": "a",
                    "subreddit": _SUBREDDITS[0],
                }
            )
    discourse = pd.DataFrame.from_records(records)
    if discourse_format == "jsonl":
        discourse_path = out_dir / "discourse.jsonl"
        discourse.to_json(discourse_path, orient="records", lines=True)
    else:
        discourse_path = out_dir / "discourse.csv"
        discourse.to_csv(discourse_path, index=False)

    # Token features: mixed hue units by collection, a sprinkle of missing hue.
    rng = rng_for(seed, 4)
    n_nfts = n_collections * nfts_per_collection
    features = pd.DataFrame(
        {
            "nft_id": [f"{codes[nft_coll[i]]}-N{i % nfts_per_collection:04d}" for i in range(n_nfts)],
            "collection_code": [codes[c] for c in nft_coll],
            "edge_bounding_box_area": np.round(rng.uniform(1e3, 5e4, n_nfts), 2),
            "edge_range_y": np.round(rng.uniform(10, 500, n_nfts), 2),
            "edge_range_x": np.round(rng.uniform(10, 500, n_nfts), 2),
            "color_hue_dist_max_min": np.round(rng.uniform(0, 1, n_nfts), 4),
            "composition_focus_lightness": np.round(rng.uniform(0, 1, n_nfts), 4),
            "color_lightness_dist_max_min": np.round(rng.uniform(0, 1, n_nfts), 4),
            "color_palette_mean_delta_e": np.round(rng.uniform(0, 60, n_nfts), 3),
            "line_art_avg_thickness": np.round(rng.uniform(0.5, 8, n_nfts), 3),
            "composition_focus_saturation": np.round(rng.uniform(0, 1, n_nfts), 4),
            "line_art_prop_curved": np.round(rng.uniform(0, 1, n_nfts), 4),
            "color_palette_saturation_std": np.round(rng.uniform(0, 0.5, n_nfts), 4),
        }
    )
    hue_units = rng.integers(0, 3, size=n_collections)
    hue = np.empty(n_nfts)
    for i in range(n_nfts):
        unit = hue_units[nft_coll[i]]
        if unit == 0:
            hue[i] = rng.uniform(0.0, 360.0)
        elif unit == 1:
            hue[i] = rng.uniform(0.0, 1.0)
        else:
            hue[i] = rng.uniform(1.0 + 1e-6, 2.0 * np.pi)
    hue[rng.uniform(size=n_nfts) < 0.02] = np.nan
    features["most_frequent_hue"] = np.round(hue, 5)
    features_path = out_dir / "token_features.csv"
    features.to_csv(features_path, index=False)

    return FixturePaths(tx_path, market_path, discourse_path, features_path)
