"""Name-based access to every test procedure, with shared settings.

A method is run as ``run_method(name, dataset, sampler, rng, num_nulls,
settings, oracle)`` and returns a p-value. ``oracle`` carries exact
conditional CDFs for ``diet_oracle``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .baselines import HrtConfig, RegressorSpec, d0_crt_test, di_crt_test, hrt_test, naive_crt_test
from .cdf import MdnSpec
from .crt import CrtConfig, DietConfig, DietModels, diet_test
from .data import LabeledDataset, RngStream
from .errors import InvalidInputError
from .nn import TrainConfig

METHODS = ("diet", "diet_oracle", "d0", "dI", "hrt", "naive")


@dataclass(frozen=True)
class MethodSettings:
    mdn: MdnSpec = field(default_factory=MdnSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    regressor: RegressorSpec = field(default_factory=RegressorSpec)
    statistic: str = "ami"
    bins: int = 10


def run_method(name: str, d: LabeledDataset, sampler, rng: RngStream, num_nulls: int,
               settings: MethodSettings = MethodSettings(), oracle=None) -> float:
    cfg = CrtConfig(num_nulls, rng)
    if name in ("diet", "diet_oracle"):
        dcfg = DietConfig(cfg, settings.mdn, settings.train, settings.statistic, settings.bins)
        models = None
        if name == "diet_oracle":
            if oracle is None or oracle[0] is None or oracle[1] is None:
                raise InvalidInputError("diet_oracle needs exact conditional CDFs for x and y")
            models = DietModels(*oracle)
        return diet_test(d, sampler, dcfg, models=models).p_value
    if name == "d0":
        return d0_crt_test(d, sampler, cfg).p_value
    if name == "dI":
        return di_crt_test(d, sampler, cfg).p_value
    if name == "hrt":
        return hrt_test(d, sampler, cfg, HrtConfig(regressor=settings.regressor)).p_value
    if name == "naive":
        return naive_crt_test(d, sampler, cfg, settings.regressor).p_value
    raise InvalidInputError(f"unknown method {name!r}; choose from {list(METHODS)}")
