"""Three-phase training loop, ablation ladder, evaluation, and the file
formats the CLI speaks (JSON config, JSON-lines metric log, binary
checkpoint).

Phase A trains the agreement branch on both scenes with optional gradient
surgery and logit normalization on the shared encoder. Phase B trains the
private target branch under the decorrelation penalty against the frozen
shared features. Phase C trains the ensemble against both frozen teachers
with symmetric-KL distillation. Later phases run only when their toggles
ask for them; evaluation uses the ensemble head when it was trained and
the agreement target head otherwise.
"""

import dataclasses
import json
from dataclasses import dataclass, field, fields

import numpy as np

from .agreement import (GradState, LogitNormConfig, cosine_similarity,
                        ema_update, gradvac_update, logitnorm,
                        magnitude_similarity)
from .data import SynthConfig, generate_pair, sample_k_per_class
from .disagreement import dcor_loss, symmetric_kl
from .errors import ConfigError, DataError, ParseError
from .metrics import (ConfusionMatrix, average_accuracy, cohen_kappa,
                      overall_accuracy)
from .model import (AGREEMENT_COMPONENTS, ENSEMBLE_COMPONENTS,
                    PRIVATE_COMPONENTS, ModelBundle, agreement_backward,
                    forward_ensemble, forward_target_agree,
                    forward_target_disagree)
from .nn import adam_step, ce_logit_grad, cross_entropy, make_rng, softmax

CHECKPOINT_MAGIC = "xscene-checkpoint-v1"


@dataclass
class TrainConfig:
    seed: int = 0
    lr: float = 5e-4
    weight_decay: float = 5e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    # larger-than-usual eps: tiny late-phase gradients otherwise turn into
    # full-size Adam steps and random-walk the converged branches
    adam_eps: float = 1e-4
    batch_size: int = 64
    epochs_agree: int = 40
    epochs_disagree: int = 20
    epochs_ensemble: int = 20
    shots: int = 10
    beta: float = 0.1
    tau: float = 2.0
    temp_agree: float = 1.0
    temp_disagree: float = 0.05
    temp_scaled: bool = True
    phi_mag_threshold: float = 1.0
    dcor_weight: float = 1.0
    ensemble_weight: float = 1.0
    source_weight: float = 1.0
    target_weight: float = 1.0
    use_gradvac: bool = False
    use_logitnorm: bool = False
    use_ensemble: bool = False
    use_dir: bool = False
    feat_dim: int = 32
    hidden_dim: int = 64
    enc_dim: int = 32
    synth: SynthConfig = field(default_factory=SynthConfig)

    def validate(self):
        positive = {
            "lr": self.lr, "beta": self.beta, "tau": self.tau,
            "temp_agree": self.temp_agree, "temp_disagree": self.temp_disagree,
        }
        for name, value in positive.items():
            if value <= 0.0:
                raise ConfigError(f"{name} must be positive, got {value}")
        if self.beta > 1.0:
            raise ConfigError(f"beta must lie in (0, 1], got {self.beta}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.shots < 1:
            raise ConfigError("shots must be >= 1")
        if min(self.epochs_agree, self.epochs_disagree, self.epochs_ensemble) < 0:
            raise ConfigError("epoch counts must be >= 0")
        if self.weight_decay < 0.0:
            raise ConfigError("weight_decay must be >= 0")
        if min(self.feat_dim, self.hidden_dim, self.enc_dim) < 1:
            raise ConfigError("architecture dims must be >= 1")
        self.synth.validate()
        return self


def config_from_dict(raw, _cls=None):
    """Build a TrainConfig from a plain dict; unknown keys anywhere are a
    config error (catches typos early)."""
    cls = _cls or TrainConfig
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        if key == "synth":
            if not isinstance(value, dict):
                raise ConfigError("synth must be an object of SynthConfig keys")
            value = config_from_dict(value, _cls=SynthConfig)
        kwargs[key] = value
    try:
        cfg = cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    if cls is TrainConfig:
        cfg.validate()
    return cfg


def load_config(path):
    with open(path, "r", encoding="utf-8") as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return config_from_dict(raw)


@dataclass
class RunReport:
    oa: float      # percentages
    aa: float
    kappa: float
    eval_head: str
    steps: list
    bundle: ModelBundle = field(default=None, repr=False)

    def metrics_dict(self):
        return {"oa": round(self.oa, 2), "aa": round(self.aa, 2),
                "kappa": round(self.kappa, 2)}


def evaluate(bundle, ds, head="agree"):
    """Argmax classification of a target dataset; returns (OA, AA, kappa)
    as fractions."""
    if ds.n == 0:
        raise DataError("evaluation split is empty")
    if head == "agree":
        logits = forward_target_agree(bundle, ds.spectra)
    elif head == "ensemble":
        logits = forward_ensemble(bundle, ds.spectra)
    elif head == "disagree":
        logits = forward_target_disagree(bundle, ds.spectra)[1]
    else:
        raise ConfigError(f"unknown evaluation head {head!r}")
    preds = logits.argmax(axis=1)
    cm = ConfusionMatrix.from_predictions(ds.classes, ds.labels, preds)
    return overall_accuracy(cm), average_accuracy(cm), cohen_kappa(cm)


def _target_batch(rng, ds, batch_size):
    # resampled with replacement: the few-shot split is smaller than a batch
    idx = rng.integers(0, ds.n, size=batch_size)
    return ds.spectra[idx], ds.labels[idx]


def _adam_components(bundle, names, cfg, t):
    for name in names:
        adam_step(getattr(bundle, name).params, cfg.lr, cfg.adam_beta1,
                  cfg.adam_beta2, cfg.weight_decay, cfg.adam_eps, t)


def _run_agreement_phase(bundle, source, tgt_train, cfg, batch_rng, steps):
    n_shared = bundle.shared_encoder.params.n_params
    state = GradState(np.zeros(n_shared), np.zeros(n_shared),
                      alpha=0.0, beta=cfg.beta)
    mag_prev = 0.0
    for _ in range(cfg.epochs_agree):
        order = batch_rng.permutation(source.n)
        for start in range(0, source.n, cfg.batch_size):
            chunk = order[start:start + cfg.batch_size]
            batch_s = (source.spectra[chunk], source.labels[chunk])
            batch_t = _target_batch(batch_rng, tgt_train, cfg.batch_size)
            ln_active = cfg.use_logitnorm and mag_prev < cfg.phi_mag_threshold
            ln_cfg = LogitNormConfig(tau=cfg.tau) if ln_active else None
            res = agreement_backward(bundle, batch_s, batch_t, ln_cfg,
                                     cfg.source_weight, cfg.target_weight)
            state.g_s, state.g_t = res.g_s, res.g_t
            phi_raw = cosine_similarity(state.g_s, state.g_t)
            gt_norm = float(np.linalg.norm(state.g_t))
            applied = bool(cfg.use_gradvac and phi_raw < state.alpha
                           and gt_norm >= 1e-12)
            g_post = (gradvac_update(state.g_s, state.g_t, phi_raw, state.alpha)
                      if applied else state.g_s)
            phi_post = cosine_similarity(g_post, state.g_t)
            mag = magnitude_similarity(state.g_s, state.g_t)
            bundle.shared_encoder.params.set_flat_grads(g_post + state.g_t)
            state.step += 1
            _adam_components(bundle, AGREEMENT_COMPONENTS, cfg, state.step)
            steps.append({
                "phase": "agree", "step": state.step,
                "phi_raw": float(phi_raw), "phi_post": float(phi_post),
                "alpha": float(state.alpha), "mag_sim": float(mag),
                "loss_s": float(res.loss_s), "loss_t": float(res.loss_t),
                "gs_norm": float(np.linalg.norm(state.g_s)), "gt_norm": gt_norm,
                "gradvac_applied": applied, "logitnorm_active": bool(ln_active),
                "ln_err_s": res.ln_err_s, "ln_err_t": res.ln_err_t,
            })
            state.alpha = ema_update(state.alpha, phi_raw, cfg.beta)
            mag_prev = mag


def _run_private_phase(bundle, tgt_train, cfg, batch_rng, steps_per_epoch, steps):
    t = 0
    for _ in range(cfg.epochs_disagree):
        for _ in range(steps_per_epoch):
            x, y = _target_batch(batch_rng, tgt_train, cfg.batch_size)
            for name in PRIVATE_COMPONENTS:
                getattr(bundle, name).params.zero_grads()
            feats, c_ext = bundle.private_extractor.forward(x)
            enc, c_enc = bundle.private_encoder.forward(feats)
            z, c_head = bundle.private_head.forward(enc)
            probs = softmax(z)
            loss_ce = cross_entropy(probs, y)
            d_enc = bundle.private_head.backward(c_head, ce_logit_grad(probs, y))
            dcor_val = None
            total = loss_ce
            if cfg.use_dir:
                shared_feats = bundle.shared_encoder.predict(
                    bundle.target_extractor.predict(x))
                dcor_val, _, g_private = dcor_loss(shared_feats, enc)
                d_enc = d_enc + cfg.dcor_weight * g_private
                total = loss_ce + cfg.dcor_weight * dcor_val
            d_feats = bundle.private_encoder.backward(c_enc, d_enc)
            bundle.private_extractor.backward(c_ext, d_feats)
            t += 1
            _adam_components(bundle, PRIVATE_COMPONENTS, cfg, t)
            steps.append({
                "phase": "disagree", "step": t,
                "loss_ce": float(loss_ce),
                "dcor": None if dcor_val is None else float(dcor_val),
                "loss": float(total),
            })


def _run_ensemble_phase(bundle, tgt_train, cfg, batch_rng, steps_per_epoch, steps):
    # under logit normalization the agreement head's trained distribution
    # is softmax of the *normalized* logits; distill from those, not from
    # the raw logits whose scale the normalized loss never controlled
    ln_cfg = LogitNormConfig(tau=cfg.tau) if cfg.use_logitnorm else None
    t = 0
    for _ in range(cfg.epochs_ensemble):
        for _ in range(steps_per_epoch):
            x, y = _target_batch(batch_rng, tgt_train, cfg.batch_size)
            base_feats = bundle.target_extractor.predict(x)  # frozen
            agree_logits = bundle.target_head.predict(
                bundle.shared_encoder.predict(base_feats))
            if ln_cfg is not None:
                agree_logits = logitnorm(agree_logits, ln_cfg)
            disagree_logits = forward_target_disagree(bundle, x)[1]
            for name in ENSEMBLE_COMPONENTS:
                getattr(bundle, name).params.zero_grads()
            enc, c_enc = bundle.ensemble_encoder.forward(base_feats)
            z, c_head = bundle.ensemble_head.forward(enc)
            probs = softmax(z)
            loss_ce = cross_entropy(probs, y)
            dz = ce_logit_grad(probs, y)
            e1, g1 = symmetric_kl(z, agree_logits, cfg.temp_agree, cfg.temp_scaled)
            e2, g2 = symmetric_kl(z, disagree_logits, cfg.temp_disagree, cfg.temp_scaled)
            dz = dz + cfg.ensemble_weight * (g1 + g2)
            d_enc = bundle.ensemble_head.backward(c_head, dz)
            bundle.ensemble_encoder.backward(c_enc, d_enc)
            t += 1
            _adam_components(bundle, ENSEMBLE_COMPONENTS, cfg, t)
            steps.append({
                "phase": "ensemble", "step": t,
                "loss_ce": float(loss_ce), "e_en1": float(e1),
                "e_en2": float(e2), "e_en": float(e1 + e2),
                "loss": float(loss_ce + cfg.ensemble_weight * (e1 + e2)),
            })


def train(cfg):
    """Run the full pipeline for one config; returns a RunReport with the
    final target-eval metrics (as percentages) and per-step diagnostics."""
    cfg.validate()
    init_ss, shot_ss, batch_ss = np.random.SeedSequence(cfg.seed).spawn(3)
    source, target = generate_pair(cfg.synth)
    tgt_train, tgt_eval = sample_k_per_class(target, cfg.shots, shot_ss)
    bundle = ModelBundle.build(
        cfg.synth.bands_source, cfg.synth.bands_target,
        cfg.synth.classes_source, cfg.synth.classes_target,
        cfg.feat_dim, cfg.hidden_dim, cfg.enc_dim, make_rng(init_ss))
    batch_rng = make_rng(batch_ss)
    steps = []
    steps_per_epoch = -(-source.n // cfg.batch_size)

    _run_agreement_phase(bundle, source, tgt_train, cfg, batch_rng, steps)
    if cfg.use_dir or cfg.use_ensemble:
        _run_private_phase(bundle, tgt_train, cfg, batch_rng, steps_per_epoch, steps)
    if cfg.use_ensemble:
        _run_ensemble_phase(bundle, tgt_train, cfg, batch_rng, steps_per_epoch, steps)

    head = "ensemble" if cfg.use_ensemble else "agree"
    oa, aa, kappa = evaluate(bundle, tgt_eval, head)
    return RunReport(oa * 100.0, aa * 100.0, kappa * 100.0, head, steps, bundle)


ABLATION_LADDER = (
    ("baseline", {}),
    ("+gradvac", {"use_gradvac": True}),
    ("+logitnorm", {"use_gradvac": True, "use_logitnorm": True}),
    ("+ensemble", {"use_gradvac": True, "use_logitnorm": True,
                   "use_ensemble": True}),
    ("+dir", {"use_gradvac": True, "use_logitnorm": True,
              "use_ensemble": True, "use_dir": True}),
)


def ablate(cfg):
    """Run the cumulative five-row component ladder with a shared seed;
    returns [(row_name, toggles, RunReport)]."""
    rows = []
    for name, toggles in ABLATION_LADDER:
        switches = dict(use_gradvac=False, use_logitnorm=False,
                        use_ensemble=False, use_dir=False)
        switches.update(toggles)
        rows.append((name, toggles, train(dataclasses.replace(cfg, **switches))))
    return rows


def write_log(path, report):
    """JSON-lines metric log: one object per step, then the final metrics
    as percentages rounded to two decimals."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        for step in report.steps:
            f.write(json.dumps(step, separators=(",", ":")) + "\n")
        f.write(json.dumps(report.metrics_dict(), separators=(",", ":")) + "\n")


def write_ablation_log(path, rows):
    with open(path, "w", encoding="utf-8", newline="") as f:
        for i, (name, toggles, report) in enumerate(rows, start=1):
            record = {"row": i, "name": name}
            for key in ("use_gradvac", "use_logitnorm", "use_ensemble", "use_dir"):
                record[key] = bool(toggles.get(key, False))
            record.update(report.metrics_dict())
            f.write(json.dumps(record, separators=(",", ":")) + "\n")


def save_checkpoint(path, bundle, meta=None):
    """JSON header line (layout + metadata), then every parameter as
    little-endian float64, weights before biases, in component order."""
    header = {"format": CHECKPOINT_MAGIC, "layout": bundle.layout(),
              "meta": meta or {}}
    blobs = []
    for mlp in bundle.components().values():
        for layer in mlp.params:
            blobs.append(layer.weight.astype("<f8").tobytes())
            blobs.append(layer.bias.astype("<f8").tobytes())
    with open(path, "wb") as f:
        f.write(json.dumps(header, separators=(",", ":")).encode("utf-8") + b"\n")
        f.write(b"".join(blobs))


def load_checkpoint(path):
    with open(path, "rb") as f:
        raw = f.read()
    newline = raw.find(b"\n")
    if newline < 0:
        raise ParseError(f"{path}: missing checkpoint header")
    try:
        header = json.loads(raw[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: bad checkpoint header: {exc}") from exc
    if header.get("format") != CHECKPOINT_MAGIC:
        raise ParseError(f"{path}: not a {CHECKPOINT_MAGIC} file")
    bundle = ModelBundle.from_layout(header["layout"])
    values = np.frombuffer(raw[newline + 1:], dtype="<f8")
    expected = sum(mlp.params.n_params for mlp in bundle.components().values())
    if values.size != expected:
        raise ParseError(
            f"{path}: checkpoint holds {values.size} floats, expected {expected}")
    offset = 0
    for mlp in bundle.components().values():
        flat = values[offset:offset + mlp.params.n_params]
        mlp.params.set_flat_params(flat)
        offset += mlp.params.n_params
    return bundle, header.get("meta", {})
