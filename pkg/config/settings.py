"""
Coarse Guidance Toolkit - Process Settings
Environment-driven settings for logging, parallelism and the conic solver stack.
"""

from dataclasses import dataclass, field
import os
from typing import List

from dotenv import load_dotenv

load_dotenv()

VALID_LOG_LEVELS = ['DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL']

DEFAULTS = {
    'log_level': 'INFO',
    'log_format': 'json',
    'debug_mode': False,
    'threads': 0,
    'row_workers': 1,
    'solver_order': ['CLARABEL', 'SCS'],
    'solver_max_attempts': 2,
    'strictness_margin': 1e-7,
    'verify_tol': 1e-9,
    'cache_size': 64,
    'float_digits': 10,
}


@dataclass
class Settings:
    """Process settings with environment variable defaults"""

    # Logging Configuration
    log_level: str = field(default_factory=lambda: os.getenv('LOG_LEVEL', 'INFO'))
    log_format: str = field(default_factory=lambda: os.getenv('LOG_FORMAT', 'json'))
    debug_mode: bool = field(default_factory=lambda: os.getenv('DEBUG', 'false').lower() == 'true')

    # Parallelism
    threads: int = field(default_factory=lambda: int(os.getenv('THREADS', '0')))
    row_workers: int = field(default_factory=lambda: int(os.getenv('ROW_WORKERS', '1')))

    # Conic solver stack
    solver_order: List[str] = field(default_factory=lambda: [
        name.strip().upper() for name in os.getenv('SOLVER_ORDER', 'CLARABEL,SCS').split(',') if name.strip()
    ])
    solver_max_attempts: int = field(default_factory=lambda: int(os.getenv('SOLVER_MAX_ATTEMPTS', '2')))
    strictness_margin: float = field(default_factory=lambda: float(os.getenv('LMI_STRICTNESS_MARGIN', '1e-7')))
    verify_tol: float = field(default_factory=lambda: float(os.getenv('LMI_VERIFY_TOL', '1e-9')))

    # Memoization of controller synthesis
    cache_size: int = field(default_factory=lambda: int(os.getenv('CACHE_SIZE', '64')))

    # Output
    float_digits: int = field(default_factory=lambda: int(os.getenv('FLOAT_DIGITS', '10')))

    def validate(self) -> None:
        """Validate configuration settings"""
        errors = []

        if self.log_level.upper() not in VALID_LOG_LEVELS:
            errors.append(f"LOG_LEVEL must be one of {VALID_LOG_LEVELS}")

        if self.log_format.lower() not in ('json', 'plain'):
            errors.append("LOG_FORMAT must be 'json' or 'plain'")

        if self.threads < 0:
            errors.append("THREADS must be >= 0 (0 = auto)")

        if self.row_workers < 1:
            errors.append("ROW_WORKERS must be >= 1")

        if not self.solver_order:
            errors.append("SOLVER_ORDER must name at least one solver")

        if self.solver_max_attempts < 1:
            errors.append("SOLVER_MAX_ATTEMPTS must be >= 1")

        if self.strictness_margin <= 0:
            errors.append("LMI_STRICTNESS_MARGIN must be > 0")

        if self.verify_tol <= 0:
            errors.append("LMI_VERIFY_TOL must be > 0")

        if self.cache_size < 0:
            errors.append("CACHE_SIZE must be >= 0")

        if not 3 <= self.float_digits <= 17:
            errors.append("FLOAT_DIGITS must be between 3 and 17")

        if errors:
            raise ValueError(f"Configuration validation failed: {'; '.join(errors)}")

    def resolved_threads(self) -> int:
        """Worker count for seed-parallel simulation (0 means one per CPU)"""
        if self.threads > 0:
            return self.threads
        return max(1, os.cpu_count() or 1)


# Global settings instance
try:
    settings = Settings()
    settings.validate()
except Exception as e:
    print(f"Configuration error: {e}")
    # Use default settings if validation fails
    settings = Settings(**DEFAULTS)
    print("Using default configuration settings")
