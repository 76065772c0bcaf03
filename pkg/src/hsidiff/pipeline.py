"""Stage orchestration for a run directory.

Each stage records a key (hash of its config sections and of its input
files) plus the hashes of its outputs in ``run_manifest.json``. A stage whose
key and outputs are unchanged is skipped unless forced. All randomness is
derived from the master seed ``run.seed``.
"""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

import numpy as np
import torch

from . import __version__, plotting
from ._util import derive_seed, sha256_bytes, sha256_file
from .classifier import ClassifierConfig, TrainConfig, load_classifier, predict, save_classifier, train_classifier
from .config import RunConfig
from .denoiser import DenoiserConfig
from .evalkit import ablation as abl
from .evalkit.maps import PALETTE, class_raster, colorize, render_map, save_raster
from .evalkit.metrics import EvalReport, evaluate
from .evalkit.report import write_report
from .features import TapSpec, build_repository, load_repository, pca_apply, pca_fit, save_repository
from .hsio import LabeledCube, SampleSplit, load_cube, normalize, save_cube, split_samples
from .pretrain import PretrainConfig, load_checkpoint, pretrain

log = logging.getLogger(__name__)

STAGES = ("ingest", "pretrain", "extract", "train", "evaluate", "render-map")

ARTIFACTS = {
    "cube": ("cube.npz", "ingest"),
    "class_names": ("class_names.txt", "ingest"),
    "split": ("split.csv", "ingest"),
    "checkpoint": ("denoiser.ckpt", "pretrain"),
    "loss_trace": ("loss_trace.csv", "pretrain"),
    "repository": ("features.repo", "extract"),
    "classifier": ("classifier.ckpt", "train"),
    "classifier_trace": ("classifier_trace.csv", "train"),
    "predictions": ("predictions.csv", "evaluate"),
    "report": ("report.txt", "evaluate"),
    "report_json": ("report.json", "evaluate"),
    "report_csv": ("report.csv", "evaluate"),
    "map": ("maps/prediction_map.png", "render-map"),
    "gt_map": ("maps/ground_truth_map.png", "render-map"),
}


class MissingArtifact(RuntimeError):
    pass


def set_deterministic(on: bool = True):
    torch.use_deterministic_algorithms(on)


def split_seed(master: int) -> int:
    return derive_seed(master, "split")


class Run:
    def __init__(self, cfg: RunConfig, force: bool = False):
        self.cfg = cfg
        self.force = force
        self.out = cfg.out_dir
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest_path = self.out / "run_manifest.json"
        self.ran = []
        self.skipped = []
        device = cfg["run"]["device"]
        if device != "cpu":
            log.warning("device %r requested; this build runs on cpu", device)
        set_deterministic(bool(cfg["run"]["deterministic"]))

    # -- bookkeeping ------------------------------------------------------

    def path(self, name: str) -> Path:
        return self.out / ARTIFACTS[name][0]

    def require(self, *names):
        for name in names:
            p = self.path(name)
            if not p.exists():
                stage = ARTIFACTS[name][1]
                src = self.cfg.source or "CONFIG"
                raise MissingArtifact(
                    f"missing {p}; produce it with: hsidiff {stage} --config {src} --out {self.out}"
                )

    def _manifest(self) -> dict:
        if self.manifest_path.exists():
            return json.loads(self.manifest_path.read_text())
        return {"stages": {}}

    def _write_manifest(self, m: dict):
        self.manifest_path.write_text(json.dumps(m, indent=2, sort_keys=True) + "\n")

    def _key(self, stage: str, sections, inputs, external=None) -> str:
        blob = {
            "stage": stage,
            "version": __version__,
            "config": self.cfg.digest(*sections),
            "seed": self.cfg.seed,
            "inputs": {n: sha256_file(self.path(n)) for n in inputs},
            "external": {k: sha256_file(p) for k, p in (external or {}).items()},
        }
        return sha256_bytes(json.dumps(blob, sort_keys=True).encode())

    def _stage(self, stage: str, sections, inputs, outputs, fn, external=None) -> bool:
        self.require(*inputs)
        key = self._key(stage, sections, inputs, external)
        m = self._manifest()
        rec = m["stages"].get(stage)
        if not self.force and rec and rec["key"] == key and self._outputs_intact(rec["outputs"]):
            log.info("%s: up to date, skipped", stage)
            self.skipped.append(stage)
            return False
        log.info("%s: running", stage)
        produced = fn() or []
        files = [self.out / ARTIFACTS[n][0] for n in outputs] + [Path(p) for p in produced]
        m = self._manifest()
        m["stages"][stage] = {
            "key": key,
            "outputs": {str(Path(f).relative_to(self.out)): sha256_file(f) for f in files},
        }
        self._write_manifest(m)
        self.ran.append(stage)
        return True

    def _outputs_intact(self, outputs: dict) -> bool:
        for rel, digest in outputs.items():
            p = self.out / rel
            if not p.exists() or sha256_file(p) != digest:
                return False
        return True

    # -- loaders -----------------------------------------------------------

    def cube(self) -> LabeledCube:
        self.require("cube", "class_names")
        return load_cube(self.path("cube"), class_names_path=self.path("class_names"), name=self.cfg["data"]["name"] or None)

    def split(self) -> SampleSplit:
        self.require("split")
        return SampleSplit.load(self.path("split"))

    # -- stage bodies (also used by the ablation runner) -------------------

    def features_for(self, cube, split, ckpt, pairs):
        tapspec = TapSpec(tuple(pairs), seed=derive_seed(self.cfg.seed, "features"))
        repo = build_repository(
            ckpt.denoiser(), ckpt.schedule, cube, split, tapspec, ckpt.config.patch_size,
            batch_size=self.cfg["features"]["batch_size"], checkpoint_id=ckpt.id,
        )
        pc = self.cfg["pca"]
        if pc["enabled"]:
            if pc["components"]:
                tr = pca_fit(repo, k=pc["components"])
            else:
                tr = pca_fit(repo, variance_fraction=pc["variance_fraction"])
            repo = pca_apply(tr, repo)
        return repo

    def classifier_configs(self, n_classes: int):
        c = self.cfg["classifier"]
        ccfg = ClassifierConfig(
            n_classes=n_classes,
            group_size=c["group_size"],
            embed_dim=c["embed_dim"],
            depth=c["depth"],
            heads=c["heads"],
            mlp_ratio=c["mlp_ratio"],
            skip_fusion=c["skip_fusion"],
            dropout=c["dropout"],
            pos_embed=c["pos_embed"],
            standardize=c["standardize"],
            seed=derive_seed(self.cfg.seed, "classifier"),
        )
        t = self.cfg["train"]
        tcfg = TrainConfig(t["epochs"], t["batch_size"], t["learning_rate"], derive_seed(self.cfg.seed, "train"))
        return ccfg, tcfg

    def fit_and_score(self, repo, cube) -> tuple:
        ccfg, tcfg = self.classifier_configs(cube.n_classes)
        model, trace = train_classifier(repo.train(), ccfg, tcfg)
        test = repo.test()
        report = evaluate(test.labels, predict(model, test), cube.n_classes, cube.class_names)
        return model, trace, report

    # -- stages --------------------------------------------------------------

    def ingest(self) -> bool:
        def body():
            d = self.cfg
            cube = load_cube(
                d.path("data", "path"), d.path("data", "labels_path"), d.path("data", "class_names"),
                name=d["data"]["name"] or None,
            )
            cube = normalize(cube, d["data"]["normalization"])
            save_cube(cube, self.path("cube"), self.path("class_names"))
            split_samples(cube, d.split_spec(), split_seed(d.seed)).save(self.path("split"))

        self.cfg.validate()
        raw = {k: self.cfg.path("data", k) for k in ("path", "labels_path", "class_names")}
        raw = {k: p for k, p in raw.items() if p is not None}
        return self._stage("ingest", ("data", "split"), (), ("cube", "class_names", "split"), body, raw)

    def pretrain(self) -> bool:
        def body():
            cube = self.cube()
            p = self.cfg["pretrain"]
            pcfg = PretrainConfig(
                steps=p["steps"], batch_size=p["batch_size"], learning_rate=p["learning_rate"],
                patch_size=p["patch_size"], seed=derive_seed(self.cfg.seed, "pretrain"),
                schedule=dict(self.cfg["schedule"]), log_every=p["log_every"],
                checkpoint_every=p["checkpoint_every"], val_batch_size=p["val_batch_size"],
            )
            d = self.cfg["denoiser"]
            dcfg = DenoiserConfig(cube.n_bands, d["base_width"], d["depth"], d["time_embed_dim"], p["patch_size"])
            ckpt = pretrain(cube, pcfg, dcfg, self.cfg["data"]["normalization"],
                            trace_path=self.path("loss_trace"), checkpoint_path=self.path("checkpoint"))
            return [plotting.plot_loss_curve(ckpt.loss_trace, self.out / "figures" / "pretrain_loss.png")]

        return self._stage("pretrain", ("schedule", "denoiser", "pretrain"), ("cube",), ("checkpoint", "loss_trace"), body)

    def extract(self) -> bool:
        def body():
            repo = self.features_for(self.cube(), self.split(), load_checkpoint(self.path("checkpoint")), self.cfg["features"]["pairs"])
            save_repository(repo, self.path("repository"))

        return self._stage("extract", ("features", "pca"), ("cube", "split", "checkpoint"), ("repository",), body)

    def train(self) -> bool:
        def body():
            cube = self.cube()
            repo = load_repository(self.path("repository"))
            ccfg, tcfg = self.classifier_configs(cube.n_classes)
            model, trace = train_classifier(repo.train(), ccfg, tcfg)
            save_classifier(model, self.path("classifier"), {"repository": sha256_file(self.path("repository"))})
            with open(self.path("classifier_trace"), "w") as fh:
                fh.write("epoch,loss,accuracy\n")
                fh.writelines(f"{e},{l!r},{a!r}\n" for e, l, a in trace)
            if trace:
                return [plotting.plot_training_curve(trace, self.out / "figures" / "classifier_training.png")]

        return self._stage("train", ("classifier", "train"), ("repository", "class_names"), ("classifier", "classifier_trace"), body)

    def evaluate(self) -> bool:
        def body():
            cube = self.cube()
            repo = load_repository(self.path("repository"))
            model = load_classifier(self.path("classifier"))
            preds = predict(model, repo)
            with open(self.path("predictions"), "w") as fh:
                fh.write("row,col,true,pred,split\n")
                for (r, c), y, p, tr in zip(repo.coords, repo.labels, preds, repo.is_train):
                    fh.write(f"{r},{c},{y},{p},{'train' if tr else 'test'}\n")
            test = ~repo.is_train
            report = evaluate(repo.labels[test], preds[test], cube.n_classes, cube.class_names)
            write_report(report, self.out, "report", title=f"{cube.name}: per-class test accuracy")
            return [plotting.plot_confusion(report.confusion, self.out / "figures" / "confusion.png", cube.class_names)]

        return self._stage("evaluate", (), ("repository", "classifier", "class_names"),
                           ("predictions", "report", "report_json", "report_csv"), body)

    def render_map(self) -> bool:
        def body():
            cube = self.cube()
            rows = read_predictions(self.path("predictions"))
            coords = np.array([(r, c) for r, c, _, _, _ in rows], dtype=np.int64).reshape(-1, 2)
            preds = np.array([p for _, _, _, p, _ in rows], dtype=np.int64)
            render_map(cube.labels.shape, coords, preds, self.path("map"))
            gt = colorize(cube.labels, PALETTE)
            save_raster(gt, self.path("gt_map"))
            pred_rgb = colorize(class_raster(cube.labels.shape, coords, preds), PALETTE)
            fig = plotting.plot_map_comparison(
                {"false color": plotting.false_color(cube.data), "ground truth": gt, "prediction": pred_rgb},
                self.out / "figures" / "map_comparison.png",
            )
            return [fig]

        return self._stage("render-map", (), ("cube", "class_names", "predictions"), ("map", "gt_map"), body)

    def ablate(self) -> list:
        a = self.cfg["ablation"]
        grid = abl.AblationGrid(tuple(a["timesteps"]), tuple(a["feature_indices"]), tuple(a["fractions"]) or (None,))
        out_base = self.out / "ablation" / "ablation"

        def body():
            cube = self.cube()
            base_split = self.split()
            ckpt = load_checkpoint(self.path("checkpoint"))

            def cell(t, f, frac) -> EvalReport:
                split = base_split if frac is None else split_samples(cube, frac, split_seed(self.cfg.seed))
                repo = self.features_for(cube, split, ckpt, [(t, f)])
                return self.fit_and_score(repo, cube)[2]

            rows = abl.ablate(grid, cell)
            paths = abl.write_table(rows, out_base, dataset=cube.name)
            fig = plotting.plot_ablation(rows, self.out / "figures" / "ablation_oa.png")
            return [paths["csv"], paths["txt"], fig]

        self._stage("ablate", ("ablation", "features", "pca", "classifier", "train"),
                    ("cube", "split", "checkpoint"), (), body)
        return abl.read_csv(out_base.with_suffix(".csv"))

    def run_all(self):
        for name in STAGES:
            getattr(self, name.replace("-", "_"))()


def read_predictions(path) -> list:
    with open(path, newline="") as fh:
        return [(int(r["row"]), int(r["col"]), int(r["true"]), int(r["pred"]), r["split"]) for r in csv.DictReader(fh)]
