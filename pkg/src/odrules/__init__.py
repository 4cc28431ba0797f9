"""Decision-tree rules as binary features for neural OD-flow regression."""

from .data import Dataset, load_csv, write_csv
from .errors import DataError, NumericError, OdRulesError, UsageError
from .metrics import MetricsReport, cpc, mae, r_squared
from .nn import MlpModel, TrainConfig, init_mlp, predict_batch, train
from .rules import Rule, RuleSet, encode, extract_rules, filter_by_variance
from .tree import RegressionTree, fit_tree

__version__ = "0.1.0"
