"""Simulation and numerical verification toolkit for stochastic integration
with respect to a Brownian motion run on an increasing time-change."""

__version__ = "0.1.0"

from .errors import (AxisMismatch, ConfigError, GridMissingJump,
                     GridNotRefined, InvalidConfig, InvalidPath,
                     InverseMismatch, MomentGateFailed, NonMonotone,
                     NonzeroOrigin, NotH0Measurable, NotLambdaAdapted,
                     NotStrictlyIncreasing, NumericalFailure, OutOfDomain,
                     PEqualsOne, PNotOne, RangeExceeded, TcbmError,
                     TooManyInadmissible, TooManyJumps, UnsortedTimes)
from .montecarlo import (ConvergenceTable, Estimate, MartingaleReport,
                         convergence_study, martingale_test, run_estimate)
from .noise import BrownianPath, TimeChangedPath, time_changed_bm
from .portfolio import (MarketSpec, ThetaFamily, build_market_paths,
                        dominance_battery, evaluate_strategy_mc,
                        make_strategy, value_closed_form_log,
                        value_closed_form_power, wealth_process)
from .stochint import (IntegrandSpec, RAxisProcess, check_lambda_adapted,
                       ito_integral_dm, ito_integral_dw, verify_backward,
                       verify_forward, verify_jacod)
from .timechange import (TimeChangeConfig, TimeChangePath, affine,
                         build_deterministic, from_samples, identity,
                         sample_timechange)
