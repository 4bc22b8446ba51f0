# CLV Tests Package
from .base import TestCase, TestCategory
from .special_functions_tests import SpecialFunctionTests
from .dataset_tests import DatasetTests
from .pnbd_tests import PnbdTests
from .pnbd_dynamic_tests import DynamicPnbdTests
from .gamma_gamma_tests import GammaGammaTests
from .estimation_tests import EstimationTests
from .prediction_tests import PredictionTests
from .simulation_tests import SimulationTests
from .bootstrap_tests import BootstrapTests
from .cli_tests import CliTests

ALL_CATEGORIES = [
    SpecialFunctionTests,
    DatasetTests,
    PnbdTests,
    DynamicPnbdTests,
    GammaGammaTests,
    EstimationTests,
    PredictionTests,
    SimulationTests,
    BootstrapTests,
    CliTests,
]

__all__ = ['TestCase', 'TestCategory', 'ALL_CATEGORIES']
