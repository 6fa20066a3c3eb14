"""Training loop: Adam, batch size 1, compound loss, best-validation-Dice
checkpoint retention. Deterministic given the seed (single-process CPU;
subject to the framework's usual reproducibility limits)."""

import json
import os
from dataclasses import asdict, dataclass

import torch

from .data import load_cases, split_cases
from .losses import binary_dice, compound_loss
from .model import VARIANTS, build_model


@dataclass
class TrainConfig:
    variant: str = "DE-Shape"
    lam: float = 1.0
    lr: float = 1e-4
    batch_size: int = 1
    epochs: int = 20          # toy default; 50 at paper scale
    split: float = 0.95       # train fraction
    base_width: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.batch_size != 1:
            raise ValueError("batch size is fixed at 1")

    @property
    def channels(self) -> int:
        return VARIANTS[self.variant]


CHECKPOINT_NAME = "checkpoint.pt"
METRICS_NAME = "metrics.json"


def save_checkpoint(model, config: TrainConfig, path, extra=None):
    doc = {"format": "craniotk-trainer-checkpoint/1",
           "config": asdict(config),
           "model_state": model.state_dict()}
    if extra:
        doc.update(extra)
    torch.save(doc, path)


def load_checkpoint(path):
    doc = torch.load(path, map_location="cpu", weights_only=False)
    if doc.get("format") != "craniotk-trainer-checkpoint/1":
        raise ValueError(f"{path}: not a trainer checkpoint")
    config = TrainConfig(**doc["config"])
    model = build_model(config.variant, config.base_width)
    model.load_state_dict(doc["model_state"])
    model.eval()
    return model, config


def _epoch_pass(model, cases, optimizer, lam, generator=None):
    training = optimizer is not None
    model.train(training)
    order = list(range(len(cases)))
    if training and generator is not None:
        order = torch.randperm(len(cases), generator=generator).tolist()
    total = 0.0
    dices = []
    for i in order:
        case = cases[i]
        x = case.inputs.unsqueeze(0)
        y = case.target.unsqueeze(0)
        if training:
            optimizer.zero_grad()
            pred = model(x)
            loss = compound_loss(pred, y, lam)
            loss.backward()
            optimizer.step()
        else:
            with torch.no_grad():
                pred = model(x)
                loss = compound_loss(pred, y, lam)
                dices.append(binary_dice(pred, y))
        total += float(loss.detach())
    mean_loss = total / max(len(cases), 1)
    return mean_loss, dices


def train(config: TrainConfig, manifest_path, out_dir,
          atlas_dir=None) -> dict:
    """Train on an exported manifest; keep the best-validation-Dice model.

    Writes ``checkpoint.pt`` and ``metrics.json`` (per-epoch curve plus
    final per-case validation rows in evaluation-report shape) to
    ``out_dir`` and returns the metrics document.
    """
    os.makedirs(out_dir, exist_ok=True)
    torch.manual_seed(config.seed)
    cases = load_cases(manifest_path, config.channels, atlas_dir)
    train_cases, val_cases = split_cases(cases, config.split)
    model = build_model(config.variant, config.base_width)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)
    shuffler = torch.Generator().manual_seed(config.seed)

    ckpt_path = os.path.join(out_dir, CHECKPOINT_NAME)
    best = {"val_dice": -1.0, "epoch": -1}
    epochs_log = []
    for epoch in range(config.epochs):
        train_loss, _ = _epoch_pass(model, train_cases, optimizer,
                                    config.lam, shuffler)
        val_loss, val_dices = _epoch_pass(model, val_cases, None, config.lam)
        val_dice = sum(val_dices) / len(val_dices)
        epochs_log.append({"epoch": epoch, "train_loss": train_loss,
                           "val_loss": val_loss, "val_dice": val_dice})
        if val_dice > best["val_dice"]:
            best = {"val_dice": val_dice, "epoch": epoch}
            save_checkpoint(model, config, ckpt_path,
                            extra={"epoch": epoch, "val_dice": val_dice})

    model, _ = load_checkpoint(ckpt_path)
    _, val_dices = _epoch_pass(model, val_cases, None, config.lam)
    rows = [{"case_id": c.case_id, "subset": "train-val", "dice": d,
             "hd_mm": None}
            for c, d in zip(val_cases, val_dices)]
    metrics = {
        "format": "craniotk-trainer-metrics/1",
        "variant": config.variant,
        "rows": rows,
        "best_epoch": best["epoch"],
        "best_val_dice": best["val_dice"],
        "epochs": epochs_log,
        "n_train": len(train_cases),
        "n_val": len(val_cases),
    }
    with open(os.path.join(out_dir, METRICS_NAME), "w") as f:
        json.dump(metrics, f, indent=2)
        f.write("\n")
    return metrics
