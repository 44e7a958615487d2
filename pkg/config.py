import hashlib
from pathlib import Path
from typing import Literal, Optional

from pydantic_settings import (
    BaseSettings,
    PydanticBaseSettingsSource,
    SettingsConfigDict,
    TomlConfigSettingsSource,
)

ALL_METHODS = ["keyword", "join", "union", "dense", "sparse", "hybrid"]
ALL_GRAPHS = ["paper", "model", "dataset", "all"]

# Keys that describe where a run happens rather than what it computes
_RUNTIME_ONLY = {"workspace_dir", "snapshot_dir", "workers", "verbose"}


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix="MODELTABLES_",
        env_file=".env",
        extra="ignore",
    )

    # Directories
    workspace_dir: Path = Path("./workspace")
    snapshot_dir: Optional[Path] = None

    # Run control
    seed: int = 0
    workers: int = 1
    verbose: bool = False

    # Extraction
    recoverer_min_agreement: float = 0.8
    require_paper_link: bool = False  # keep only cards that link a paper and carry tables

    # Quality control
    min_body_rows: int = 1
    min_cols: int = 2
    include_sources: list[str] = ["model_card", "github_readme", "arxiv_html"]
    footnote_markers: list[str] = [r"\*", "†", "‡", r"\[\d+\]"]
    # kinds whose adjacent fragments merge, within one document; other kinds keep every table
    stitch_sources: list[str] = ["arxiv_html", "s2_text"]
    anchor_stage: Literal["none", "title", "valid_title"] = "none"
    validate_datasets: bool = True

    # Augmentation
    drop_cell_rate: float = 0.1

    # Relatedness
    relation: Literal["direct", "overlap"] = "direct"
    require_intent: bool = False
    require_influential: bool = False
    shared_ancestor_closure: bool = False

    # Search
    embedding_dim: int = 256
    bm25_k1: float = 0.9
    bm25_b: float = 0.4
    max_query_terms: int = 1024
    hybrid_depth: int = 100
    sparse_stopwords: list[str] = []
    vectors_file: Optional[Path] = None

    # Evaluation
    k: int = 1
    query_policy: Literal["all_tables", "tables_with_positives"] = "tables_with_positives"
    methods: list[str] = ALL_METHODS
    graphs: list[str] = ALL_GRAPHS
    augmented: bool = False
    augmentations: list[str] = ["transpose", "header_to_cell"]  # extra query runs in augmented mode
    union_on_transpose: bool = False  # union search cost explodes on transposed pools
    source_subsets: list[str] = []  # e.g. ["M", "M+G", "model_card+github_readme"]
    variant: Optional[str] = None  # query perturbation: transpose|header2cell|shufflecol|shufflerow|dropcell
    citation_sweep: bool = False  # evaluate the paper graph under all eight citation filters


def load_settings(config_file: Optional[Path] = None, **overrides) -> Settings:
    """Effective settings: overrides > config file > environment > .env > defaults."""
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if config_file is None:
        return Settings(**overrides)

    toml_path = Path(config_file)
    if not toml_path.is_file():
        raise FileNotFoundError(f"config file not found: {toml_path}")

    class FileSettings(Settings):
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
                TomlConfigSettingsSource(settings_cls, toml_file=toml_path),
                env_settings,
                dotenv_settings,
                file_secret_settings,
            )

    return FileSettings(**overrides)


def config_hash(cfg: Settings) -> str:
    payload = cfg.model_dump_json(exclude=_RUNTIME_ONLY)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


settings = Settings()
