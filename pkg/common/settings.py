import os
from dataclasses import dataclass

from dotenv import load_dotenv

load_dotenv()


@dataclass(frozen=True)
class Settings:
    data_dir: str
    root_seed: int
    key_bits: int
    hash_bits: int

    @property
    def raw_dir(self):
        return os.path.join(self.data_dir, "raw")

    @property
    def processed_dir(self):
        return os.path.join(self.data_dir, "processed")

    @property
    def final_dir(self):
        return os.path.join(self.data_dir, "final")


def get_settings():
    """Read settings from the environment (and a .env file if present)"""
    return Settings(
        data_dir=os.environ.get("WIND_PPD_DATA_DIR", os.path.join(os.getcwd(), "data")),
        root_seed=int(os.environ.get("WIND_PPD_SEED", "0")),
        key_bits=int(os.environ.get("WIND_PPD_KEY_BITS", "512")),
        hash_bits=int(os.environ.get("WIND_PPD_HASH_BITS", "2048")),
    )
