from services.conversion import ConversionService
from services.benchmark import BenchmarkService
from services.verification import PropertySuite

__all__ = [
    'ConversionService',
    'BenchmarkService',
    'PropertySuite'
]
