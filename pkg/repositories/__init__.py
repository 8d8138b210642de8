from repositories.base_repository import BaseRepository
from repositories.parameter_repository import ParameterRepository
from repositories.profile_repository import ProfileRepository
from repositories.program_repository import ProgramRepository
from repositories.report_repository import ReportRepository

__all__ = [
    'BaseRepository',
    'ParameterRepository',
    'ProfileRepository',
    'ProgramRepository',
    'ReportRepository'
]
