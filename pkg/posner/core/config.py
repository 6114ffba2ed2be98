from pydantic_settings import BaseSettings

class Settings(BaseSettings):

    POSNER_WORKERS: int = 1
    POSNER_DEFAULT_TOLERANCE: float = 0.1
    POSNER_MAX_ROTATION_ORDER: int = 8
    POSNER_AXIS_MERGE_DEG: float = 1.0
    POSNER_AXIS_RELATION_DEG: float = 5.0
    POSNER_LOG_LEVEL: str = "INFO"

    class Config:
        case_sensitive = True
        env_file = ".env"
        env_file_encoding = 'utf-8'

settings = Settings()
