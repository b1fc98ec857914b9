from pydantic import Field
from pydantic_settings import BaseSettings, PydanticBaseSettingsSource, SettingsConfigDict, TomlConfigSettingsSource

ARTIFACT_VERSION: str = "0.3.0"
REPORT_SCHEMA_VERSION: int = 1


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_file_encoding="utf-8",
        env_file=".env",
        env_prefix="CTPTMED_",
        case_sensitive=False,
        toml_file="ctptmed.toml",
        extra="ignore",
    )

    seed: int = Field(
        default=20250101, ge=0, lt=2**64, description="Master seed for every random stream")
    threads: int | None = Field(
        default=None, ge=1, description="Worker processes for simulations; None uses all cores")
    log_level: str = "INFO"

    # chain protocol
    total_iterations: int = Field(default=30000, ge=1000)
    burn_in_fraction: float = Field(default=0.2, gt=0.0, lt=1.0)
    fit_chains: int = Field(
        default=4, ge=1, description="Chains for user-facing fits (enables R-hat)")
    simulation_chains: int = Field(
        default=1, ge=1, description="Chains per model inside simulation studies")
    adapt_window: int = Field(default=50, ge=1)
    target_accept: float = Field(default=0.44, gt=0.0, lt=1.0)

    # priors
    gamma_shape: float = Field(default=2.0, gt=0.0)
    gamma_rate: float = Field(default=2.0, gt=0.0)
    gamma_lower: float = Field(default=0.05, gt=0.0)
    gamma_upper: float = Field(default=20.0, gt=0.0)
    nu_rate: float = Field(default=0.01, gt=0.0)

    # null partition for the mediation Bayes factor
    q00: float = Field(default=1 / 3, ge=0.0)
    q01: float = Field(default=1 / 3, ge=0.0)
    q10: float = Field(default=1 / 3, ge=0.0)

    # simulation studies
    replications: int = Field(default=200, ge=1)
    bootstrap_resamples: int = Field(default=1999, ge=199)
    bootstrap_level: float = Field(default=0.95, gt=0.0, lt=1.0)
    bayes_factor_cutoff: float = Field(default=10.0, gt=0.0)

    add_intercept: bool = True
    report_hpd: bool = False
    output_dir: str = "results"

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> tuple[PydanticBaseSettingsSource, ...]:
        return (
            init_settings,
            env_settings,
            dotenv_settings,
            TomlConfigSettingsSource(settings_cls),
            file_secret_settings,
        )


settings = Settings()
