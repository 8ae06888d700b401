"""Credit risk with fluctuating asset correlations.

Modules
-------
market
    Price series, returns, correlation estimation, synthetic markets.
wishart
    Wishart-averaged return densities, sampling, aggregation and fit of N.
merton
    Merton contract losses and the averaged portfolio loss density.
montecarlo
    Monte-Carlo losses, VaR and ETL comparisons.
copula
    Two-portfolio loss copulas and Gaussian-copula deviations.
"""

__version__ = "0.1.0"

from .exceptions import (AlignmentError, ContractViolation, DegenerateSeriesError, DomainError,
                         NumericalError, ParseError, RMTCreditError)
from .market import (CorrelationEstimator, MomentEstimates, PriceSeries, ReturnMatrix, SlidingWindowCorrelation,
                     SlidingWindowEnsemble, align_series, compute_returns, correlation_matrix, covariance_matrix,
                     effective_correlation, equicorrelation, estimate_drift_vol, generate_synthetic_market, load_csv,
                     normalize_series, rolling_volatility, sliding_correlation_ensemble)
from .wishart import (AggregatedSample, EnsembleSpec, FitReport, ReturnAggregator, WishartMixture,
                      aggregate_returns, averaged_return_density, fit_N, mixture_sample, sample_random_covariance,
                      univariate_aggregated_density, wishart_log_density)
from .merton import (LossDensityCurve, PortfolioSpec, avg_loss_density, contract_loss, default_probability,
                     limiting_loss_density, moment_mjk, portfolio_loss, portfolio_moments, risk_measures_from_curve)
from .montecarlo import (LossSamples, RiskReport, SimulationConfig, compare_effective_vs_empirical, one_factor_market,
                         compare_var_underestimation, run_losses, simulate_terminal_values, var_etl)
from .copula import (CopulaHistogram, DeviationMap, TwoPortfolioSpec, deviation_map, empirical_copula,
                     gaussian_copula_histogram, joint_loss_samples, scenario_suite, size_effect)
