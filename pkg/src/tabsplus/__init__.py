"""BPMN collaboration compiler and simulated-ledger runtime.

The pipeline: parse and normalize a collaboration (`model`), build its flow
DAG (`graph`), enumerate single-entry single-exit transaction candidates
(`sese`), pick a plan (`plan`), synthesize communicating state machines
(`fsm`), weave transaction patterns into a deployable package (`codegen`),
and execute traces on a simulated ledger (`ledger`, `runtime`). `cost`
benchmarks the coordination mechanisms; `cli` and `service` are the front
ends.
"""

from .codegen import ContractPackage, compile_package, deserialize, generate, serialize
from .cost import CostReport, calibrate, run_benchmark
from .errors import TabsError
from .fsm import DeFsmModel, synthesize
from .graph import build_dag
from .ledger import GasSchedule, Ledger
from .model import BpmnModel, normalize, parse_bpmn
from .offchain import OffchainStore
from .plan import TxnPlan, build_plan, empty_plan
from .runtime import ExternalInput, FaultPlan, Monitor, classify_trace, replay_trace
from .sese import RegionForest, enumerate_candidates

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "TabsError",
    "BpmnModel", "parse_bpmn", "normalize",
    "build_dag",
    "RegionForest", "enumerate_candidates",
    "TxnPlan", "build_plan", "empty_plan",
    "DeFsmModel", "synthesize",
    "ContractPackage", "generate", "compile_package", "serialize", "deserialize",
    "GasSchedule", "Ledger",
    "OffchainStore",
    "Monitor", "ExternalInput", "FaultPlan", "replay_trace", "classify_trace",
    "CostReport", "run_benchmark", "calibrate",
]
