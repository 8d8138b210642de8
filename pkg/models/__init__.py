from models.tensor_group import TensorGroup
from models.gate_params import AperiodicGateParams, PeriodicGateParams, PositionalGateParams, GateParams, GateMatrix
from models.lpa_params import LpaLayerParams, LpaOutput
from models.encoder import AttentionParams, EncoderLayer, ToyEncoder, EncoderOutput
from models.segment_program import PulseSegments, SegmentProgram, HardGateOutput
from models.program_cache import ProgramCache, CacheEntry
from models.hardware import HardwareProfile, ComponentCost, CostBreakdown
from models.conversion import SweepHyperparams, CurriculumSchedule, SweepReport, StageTrace, ConversionResult
from models.run_config import RunConfig

__all__ = [
    'TensorGroup',
    'AperiodicGateParams',
    'PeriodicGateParams',
    'PositionalGateParams',
    'GateParams',
    'GateMatrix',
    'LpaLayerParams',
    'LpaOutput',
    'AttentionParams',
    'EncoderLayer',
    'ToyEncoder',
    'EncoderOutput',
    'PulseSegments',
    'SegmentProgram',
    'HardGateOutput',
    'ProgramCache',
    'CacheEntry',
    'HardwareProfile',
    'ComponentCost',
    'CostBreakdown',
    'SweepHyperparams',
    'CurriculumSchedule',
    'SweepReport',
    'StageTrace',
    'ConversionResult',
    'RunConfig'
]
