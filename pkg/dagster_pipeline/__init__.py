from .repository import wind_ppd_em_repository

__all__ = ["wind_ppd_em_repository"]
