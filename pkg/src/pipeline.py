"""A module for running the three training stages and plotting their progress.

Stage 1 trains a single-image captioner, stage 2 pretrains the dual-image model
on report sections and difference questions, and stage 3 finetunes it on
question answering. The module employs the strategy pattern: each stage is a
`StagePipeline` subclass that only decides which samples it trains and
validates on, and `StageSelector` runs whichever strategy it is given.
"""

import configparser
import dataclasses
import logging
import math
import typing
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import matplotlib.pylab as plt
import numpy as np
import pandas as pd

import data
import tensor as T
import tokenizer
from checkpoint import Checkpoint, save_checkpoint
from model import ModelConfig, VisionLanguageModel
from optim import AdamW, AdamWHyper, clip_grad_norm
from utils import Configuration, fingerprint

logger = logging.getLogger(__name__)


class NumericalError(ArithmeticError):
    pass


class ConfigError(ValueError):
    pass


STAGE3_TASKS = ("difference", "nondifference")


@dataclass
class StageConfig:
    """
    Every training hyperparameter and ablation switch of one stage.

    Attributes:
        stage (int): 1, 2 or 3.
        dataset_dir (str): Directory written by the build step.
        task (str): Stage-3 task, "difference" or "nondifference".
        include_findings (bool): Stage 2 trains on Findings samples.
        include_impression (bool): Stage 2 trains on Impression samples.
        include_past_image (bool): Past images are fed (False drops every past image).
        include_diffqa_in_stage2 (bool): Stage 2 also trains on difference questions.
        lr (float): AdamW learning rate.
        beta1 (float): AdamW first-moment decay.
        beta2 (float): AdamW second-moment decay.
        eps (float): AdamW denominator guard.
        weight_decay (float): Decoupled weight decay.
        batch_size (int): Samples per step.
        max_steps (int): Step budget.
        eval_interval (int): Steps between validation passes.
        patience (int): Steps without validation improvement before stopping.
        clip_norm (float): Global gradient-norm limit (0 disables clipping).
        seed (int): Seed for initialization, shuffling and dropout.
        max_train_samples (Optional[int]): Keep only the first n training samples.
        validate_on_train (bool): Validate on the training samples themselves.
        tie_time_encodings (bool): Start with t_enc_cur equal to t_enc_past, both frozen.
        model (ModelConfig): Architecture; vocab size and dual mode are set per run.
    """

    stage: int = 3
    dataset_dir: str = str(Configuration.PROCESSED_DATA_PATH)
    task: str = "difference"
    include_findings: bool = True
    include_impression: bool = True
    include_past_image: bool = True
    include_diffqa_in_stage2: bool = True
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    batch_size: int = 16
    max_steps: int = 2000
    eval_interval: int = 100
    patience: int = 500
    clip_norm: float = 1.0
    seed: int = 0
    max_train_samples: Optional[int] = None
    validate_on_train: bool = False
    tie_time_encodings: bool = False
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.stage not in (1, 2, 3):
            raise ConfigError(f"stage must be 1, 2 or 3, got {self.stage}")
        if self.task not in STAGE3_TASKS:
            raise ConfigError(f"task must be one of {STAGE3_TASKS}, got {self.task!r}")
        if self.batch_size < 1 or self.max_steps < 1 or self.eval_interval < 1:
            raise ConfigError("batch_size, max_steps and eval_interval must be positive")

    @property
    def hyper(self) -> AdamWHyper:
        return AdamWHyper(self.lr, self.beta1, self.beta2, self.eps, self.weight_decay)

    def to_dict(self) -> Dict[str, Any]:
        values = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        values["model"] = self.model.to_dict()
        return values

    def fingerprint(self) -> str:
        return fingerprint(self.to_dict())

    @classmethod
    def from_file(cls, path: Path) -> "StageConfig":
        """
        Read a configparser file with optional ``[stage]`` and ``[model]`` sections.

        Raises:
            ConfigError: On unknown sections or keys, or unparsable values.
        """
        parser = configparser.ConfigParser()
        if not parser.read(path, encoding="utf-8"):
            raise ConfigError(f"cannot read config file {path}")
        overrides = []
        for section in parser.sections():
            if section not in ("stage", "model"):
                raise ConfigError(f"unknown config section [{section}] in {path}")
            for key, value in parser.items(section):
                overrides.append(f"{section}.{key}={value}")
        return cls().apply_overrides(overrides)

    def apply_overrides(self, overrides: Iterable[str]) -> "StageConfig":
        """
        Return a copy with dotted-path overrides applied.

        Args:
            overrides (Iterable[str]): Items like ``stage.max_steps=200`` or ``model.d_model=32``.

        Raises:
            ConfigError: On malformed items, unknown keys or unparsable values.
        """
        stage_values: Dict[str, Any] = {}
        model_values: Dict[str, Any] = {}
        for item in overrides:
            key, sep, raw = item.partition("=")
            section, dot, name = key.strip().partition(".")
            if not sep or not dot:
                raise ConfigError(f"override {item!r} is not of the form section.key=value")
            if section == "stage" and name != "model":
                target, owner = stage_values, StageConfig
            elif section == "model":
                target, owner = model_values, ModelConfig
            else:
                raise ConfigError(f"unknown config key {key!r}")
            hints = typing.get_type_hints(owner)
            if name not in hints:
                raise ConfigError(f"unknown config key {key!r}")
            target[name] = _parse_value(raw.strip(), hints[name], key)
        try:
            model = self.model.replace(**model_values) if model_values else self.model
            return dataclasses.replace(self, model=model, **stage_values)
        except (TypeError, ValueError) as err:
            raise ConfigError(str(err)) from err


def _parse_value(raw: str, annotation, key: str):
    origin = typing.get_origin(annotation)
    args = typing.get_args(annotation)
    if origin is typing.Union and type(None) in args:
        if raw.lower() in ("none", ""):
            return None
        annotation = next(a for a in args if a is not type(None))
        origin = typing.get_origin(annotation)
    try:
        if origin in (tuple, list):
            return tuple(int(x) for x in raw.split(",") if x.strip())
        if annotation is bool:
            lowered = raw.lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return lowered in ("true", "1", "yes")
        if annotation in (int, float, str):
            return annotation(raw)
    except ValueError as err:
        raise ConfigError(f"cannot parse {key}={raw!r}") from err
    raise ConfigError(f"unsupported config key {key!r}")


def validation_loss(
    model: VisionLanguageModel,
    samples: Sequence[data.LongitudinalSample],
    vocab: tokenizer.Vocab,
    images: data.ImageCache,
    batch_size: int,
) -> float:
    """
    Token-weighted mean cross-entropy over `samples` in eval mode.

    Raises:
        NumericalError: If the loss is not finite.
    """
    model.eval()
    total, count = 0.0, 0
    with T.no_grad():
        for chunk in data.iterate_batches(samples, batch_size):
            batch = data.collate(chunk, vocab, images, model.config.dual)
            per_position = model.loss(batch, reduction="none").data
            total += float(per_position.astype(np.float64).sum())
            count += int((batch.target_ids[:, 1:] != tokenizer.PAD_ID).sum())
    value = total / max(count, 1)
    if not math.isfinite(value):
        raise NumericalError(f"validation loss is {value}")
    return value


def without_past(samples: Iterable[data.LongitudinalSample]) -> List[data.LongitudinalSample]:
    return [
        dataclasses.replace(s, past_image=None, past_study_id=None) for s in samples
    ]


class TrainingStrategy(ABC):
    @abstractmethod
    def train(self) -> Checkpoint:
        pass

    @abstractmethod
    def display_plot(self, plot_name, **kwargs):
        pass


class StagePipeline(TrainingStrategy):
    """
    Trains one stage and keeps the best-validation parameters.

    Parameters:
        config (StageConfig): The stage configuration.
        init (Optional[Checkpoint]): Parameters to start from. Past-branch
            parameters missing from it are freshly initialized. A checkpoint of
            the same stage also restores the AdamW moments and step count.
        out_dir (Optional[Path]): Where the checkpoint, run log and loss plot go.
    """

    def __init__(
        self,
        config: StageConfig,
        init: Optional[Checkpoint] = None,
        out_dir: Optional[Path] = None,
    ):
        self.config = config
        self.init = init
        self.out_dir = None if out_dir is None else Path(out_dir)
        self.dataset_dir = Path(config.dataset_dir)
        self.vocab = tokenizer.load_vocab(self.dataset_dir / Configuration.VOCAB_FILE)
        self.model_config = config.model.replace(
            vocab_size=self.vocab.size, dual=self.dual, seed=config.seed
        )
        self.images = data.ImageCache(self.model_config.in_channels, T.get_default_dtype())
        self.model: Optional[VisionLanguageModel] = None
        self.run_log = pd.DataFrame(columns=["step", "train_loss", "valid_loss", "lr"])
        self.plot_functions = {
            "loss_curve": partial(self.plot_loss_curve, figsize=(6, 4)),
        }

    dual = True

    @abstractmethod
    def select_samples(
        self,
    ) -> Tuple[List[data.LongitudinalSample], List[data.LongitudinalSample]]:
        """Return the (train, valid) samples of the stage."""

    def _load(self, name: str) -> List[data.LongitudinalSample]:
        return data.load_samples(self.dataset_dir / name)

    def _split(self, samples, split):
        return [s for s in samples if s.split == split]

    def build_model(self) -> VisionLanguageModel:
        model = VisionLanguageModel(self.model_config)
        if self.init is not None:
            model.load_state(self.init.parameters)
        if self.config.tie_time_encodings and self.dual:
            model.fusion.tie_time_encodings(freeze=True)
        return model

    def prepare_samples(self):
        train, valid = self.select_samples()
        if self.config.max_train_samples is not None:
            train = train[: self.config.max_train_samples]
        if not train:
            raise data.DataValidationError(
                f"stage {self.config.stage} has no training samples in {self.dataset_dir}"
            )
        if not self.config.include_past_image:
            train, valid = without_past(train), without_past(valid)
        if self.config.validate_on_train:
            valid = train
        if not valid:
            logger.warning(
                "stage=%d validation set empty, validating on training samples",
                self.config.stage,
            )
            valid = train
        return train, valid

    def train(self) -> Checkpoint:
        """
        Run AdamW on shuffled batches with periodic validation and early stopping.

        Returns:
            Checkpoint: The parameters with the best validation loss.

        Raises:
            NumericalError: If a training or validation loss is not finite.
            DataValidationError: If the stage has no training samples.
            ParameterMismatchError: If `init` does not fit the architecture.
        """
        cfg = self.config
        train, valid = self.prepare_samples()
        self.model = model = self.build_model()
        optimizer = AdamW(model.named_parameters(), cfg.hyper)
        if self.init is not None and self.init.stage == cfg.stage and self.init.optimizer:
            restored = optimizer.load_state_dict(self.init.optimizer, self.init.step)
            logger.info(
                "stage=%d resumed optimizer moments=%d step=%d",
                cfg.stage,
                len(restored),
                self.init.step,
            )
        data_rng = np.random.default_rng([cfg.seed, cfg.stage])
        logger.info(
            "stage=%d train=%d valid=%d params=%d",
            cfg.stage,
            len(train),
            len(valid),
            sum(p.size for p in model.parameters()),
        )

        rows = []
        best_loss, best_step = math.inf, 0
        best_state, best_moments = model.state_dict(), {}
        best_optimizer_step = optimizer.step_count
        window: List[float] = []
        step = 0
        stop = False
        while not stop:
            for chunk in data.iterate_batches(train, cfg.batch_size, data_rng):
                step += 1
                model.train()
                batch = data.collate(chunk, self.vocab, self.images, model.config.dual)
                loss = model.loss(batch)
                value = loss.item()
                if not math.isfinite(value):
                    raise NumericalError(f"training loss is {value} at step {step}")
                optimizer.zero_grad()
                loss.backward()
                clip_grad_norm(optimizer.params.values(), cfg.clip_norm)
                optimizer.step()
                window.append(value)
                logger.debug("step=%d train_loss=%.4f", step, value)

                if step % cfg.eval_interval == 0 or step == cfg.max_steps:
                    valid_loss = validation_loss(
                        model, valid, self.vocab, self.images, cfg.batch_size
                    )
                    rows.append(
                        {
                            "step": step,
                            "train_loss": float(np.mean(window)),
                            "valid_loss": valid_loss,
                            "lr": cfg.lr,
                        }
                    )
                    window = []
                    logger.info(
                        "stage=%d step=%d train_loss=%.4f valid_loss=%.4f",
                        cfg.stage,
                        step,
                        rows[-1]["train_loss"],
                        valid_loss,
                    )
                    if valid_loss < best_loss:
                        best_loss, best_step = valid_loss, step
                        best_state = model.state_dict()
                        best_moments = {
                            k: v.copy() for k, v in optimizer.state_dict().items()
                        }
                        best_optimizer_step = optimizer.step_count
                    elif step - best_step >= cfg.patience:
                        logger.info(
                            "early stop step=%d best_step=%d best_valid_loss=%.4f",
                            step,
                            best_step,
                            best_loss,
                        )
                        stop = True
                if stop or step >= cfg.max_steps:
                    stop = True
                    break

        self.run_log = pd.DataFrame(rows, columns=["step", "train_loss", "valid_loss", "lr"])
        model.load_state(best_state)
        checkpoint = Checkpoint(
            parameters=best_state,
            optimizer=best_moments,
            step=best_optimizer_step,
            fingerprint=cfg.fingerprint(),
            model_config=model.config.to_dict(),
            stage=cfg.stage,
            rng_state={
                "model": model.rng.bit_generator.state,
                "data": data_rng.bit_generator.state,
            },
            best_valid_loss=best_loss,
        )
        if self.out_dir is not None:
            self.write_artifacts(checkpoint)
        return checkpoint

    def write_artifacts(self, checkpoint: Checkpoint) -> None:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(checkpoint, self.out_dir / Configuration.CHECKPOINT_FILE)
        self.run_log.to_csv(self.out_dir / Configuration.RUN_LOG_FILE, index=False)
        self.display_plot(
            "loss_curve", save_path=self.out_dir / Configuration.LOSS_PLOT_FILE
        )

    def plot_loss_curve(self, figsize=(6, 4), save_path: Optional[Path] = None) -> Any:
        """
        Plot training and validation loss against the step.

        Args:
            figsize (tuple): Figure size in inches.
            save_path (Optional[Path]): If given, the figure is written there and closed.

        Returns:
            Any: The matplotlib axes.
        """
        fig, ax = plt.subplots(figsize=figsize)
        if not self.run_log.empty:
            self.run_log.plot(x="step", y=["train_loss", "valid_loss"], ax=ax, marker="o")
        ax.set_title(f"Stage {self.config.stage} loss")
        ax.set_xlabel("step")
        ax.set_ylabel("cross-entropy")
        ax.grid(False)
        fig.tight_layout()
        if save_path is not None:
            fig.savefig(save_path, dpi=100, metadata={"Software": None})
            plt.close(fig)
        return ax

    def display_plot(self, plot_name, **kwargs) -> Any:
        """
        Display a plot based on the given plot name and keyword arguments.

        Parameters:
            plot_name (str): The name of the plot to display. Valid names: loss_curve.
            **kwargs: Passed on to the plot function.

        Returns:
            Any: The return value of the plot function.
        """
        plot_function = self.plot_functions.get(plot_name)
        if plot_function:
            return plot_function(**kwargs)
        logger.warning(
            "No plot function found for %s. Valid arguments: %s.",
            plot_name,
            ", ".join(self.plot_functions),
        )
        return None


class CaptioningPipeline(StagePipeline):
    """Stage 1: current image to Findings, single-image mode."""

    dual = False

    def select_samples(self):
        samples = self._load(Configuration.STAGE1_FILE)
        return self._split(samples, "train"), self._split(samples, "valid")


class LongitudinalPretrainingPipeline(StagePipeline):
    """Stage 2: report sections (and difference questions) with the past branch attached."""

    def select_samples(self):
        cfg = self.config
        tasks = set()
        if cfg.include_findings:
            tasks.add("findings")
        if cfg.include_impression:
            tasks.add("impression")
        if cfg.include_diffqa_in_stage2:
            tasks.add("difference")
        samples = [s for s in self._load(Configuration.STAGE2_FILE) if s.task in tasks]
        return self._split(samples, "train"), self._split(samples, "valid")


class FinetuningPipeline(StagePipeline):
    """Stage 3: difference (or non-difference) question answering only."""

    def select_samples(self):
        pattern = (
            Configuration.STAGE3_FILE
            if self.config.task == "difference"
            else Configuration.NONDIFF_FILE
        )
        return (
            self._load(pattern.format(split="train")),
            self._load(pattern.format(split="valid")),
        )


STAGE_PIPELINES = {
    1: CaptioningPipeline,
    2: LongitudinalPretrainingPipeline,
    3: FinetuningPipeline,
}


class StageSelector:
    """Runs whichever stage strategy it is given."""

    def __init__(self, strategy: TrainingStrategy):
        self.strategy = strategy

    def execute(self) -> Checkpoint:
        return self.strategy.train()

    def display_plot(self, plot_name, **kwargs):
        return self.strategy.display_plot(plot_name, **kwargs)


def run_stage(
    config: StageConfig,
    init: Optional[Checkpoint] = None,
    out_dir: Optional[Path] = None,
) -> Checkpoint:
    """
    Train one stage and return its best-validation checkpoint.

    Args:
        config (StageConfig): Stage configuration.
        init (Optional[Checkpoint]): Starting parameters (None trains from scratch).
        out_dir (Optional[Path]): Artifact directory; nothing is written when None.
    """
    strategy = STAGE_PIPELINES[config.stage](config, init, out_dir)
    return StageSelector(strategy).execute()
