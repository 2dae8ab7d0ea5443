import yaml
from pathlib import Path

from hybid.backends import Backend, get_backend
from hybid.schemas import SolveOptions

_ROOT = Path(__file__).absolute().parent


def get_config(config: dict | None = None) -> dict:
    # This loads things either ALL from configurable, or
    # all from the config.yaml
    configurable = (config or {}).get("configurable") or {}
    if "backend" in configurable:
        return configurable
    else:
        with open(_ROOT.joinpath("config.yaml")) as stream:
            return yaml.safe_load(stream)


def solve_options(config: dict | None = None) -> SolveOptions:
    settings = get_config(config)
    return SolveOptions(
        backend=settings["backend"],
        mip_gap_tol=settings["mip_gap"],
        time_limit=settings["time_limit"],
        threads=settings.get("threads", 1),
    )


def make_backend(config: dict | None = None) -> Backend:
    settings = get_config(config)
    if settings["backend"] == "cbc":
        return get_backend(
            "cbc",
            executable=settings.get("cbc_path", "cbc"),
            workdir=settings.get("workdir"),
        )
    return get_backend(settings["backend"])
