"""Stock-return forecasting with small neural networks and categorical hyperparameter search.

Submodules:

- ``market_data``: OHLCV and Goyal-Welch CSV parsing, monthly series, log returns
- ``technical``: the 17 binary momentum / moving-average / on-balance-volume signals
- ``fundamentals``: the 14 Goyal-Welch predictors
- ``dataset``: supervised pairing, experiment windows, train/validation/test splits
- ``nn``: feedforward network with dropout or batch normalization
- ``hpo``: TPE, simulated annealing and random search
- ``evaluation``: MSE, in- and out-of-sample R², OLS baseline, seed aggregation
- ``attribution``: Shapley values and rank stability
- ``pipeline`` / ``cli``: the experiment runner
"""

__version__ = "0.1.0"
