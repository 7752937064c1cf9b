"""Bi-level adversarial training of the fake-profile generator.

Lower level: fit the surrogate recommender on real + fake interactions and
update the detector on real-vs-fake profiles.  Upper level: one generator step
on ``lam * L_trans + (1 - lam) * L_imper``.

``L_trans`` reaches the generator through a one-step differentiable look-ahead
of the surrogate: fake ratings act as confidence weights on the fake users'
positive interactions, the surrogate takes one virtual SGD step on that loss,
and target-user predictions are read from the stepped parameters.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
from sklearn.base import BaseEstimator
from torch.func import functional_call

from .data import Dataset, SplitDataset
from .detector import DetectorNet, Profiles, profiles_from_dataset, profiles_from_fakes, train_detector
from .generator import FakeRatingMatrix, RatingGenerator, pretrain_generator, prune, prune_ste, reconstruct
from .profiles import FakeProfileBatch
from .surrogate import DeepCoNNPlusPlus
from .templates import TemplateMatrix, rank_templates
from .text import TemplateBackend, generate_reviews
from .validation import check_fitted

logger = logging.getLogger(__name__)

EPS = 1e-7


@dataclass
class AttackConfig:
    """Budget, objective weights and the training schedule of one attack run.

    ``attack_size`` / ``filler_size`` left as ``None`` resolve against the
    training data: 3% of users (rounded up) and the mean profile length.
    """

    target_item: int
    attack_size: int | None = None
    filler_size: int | None = None
    lam: float = 0.5
    K: int = 10
    C: float = 0.01
    outer_iterations: int = 10
    initial_epochs: int = 20
    lower_epochs: int = 1
    detector_steps: int = 5
    generator_steps: int = 1
    generator_lr: float = 1e-3
    pretrain_epochs: int = 100
    pretrain_lr: float = 1e-2
    lookahead_lr: float = 1.0
    target_user_sample: int = 128
    cold_start: bool = False
    regenerate_reviews: bool = False
    # model sizes
    dim: int = 50
    n_filters: int = 100
    filter_width: int = 3
    doc_len: int = 300
    word_dim: int = 300
    embeddings: str = "random"
    batch_size: int = 256
    learning_rate: float = 1e-3
    neg_ratio: int = 4
    dropout: float = 0.5
    generator_layers: int = 3
    attack_fraction: float = 0.03
    seed: int = 0

    def resolve(self, ds: Dataset) -> AttackConfig:
        A = self.attack_size if self.attack_size is not None else math.ceil(self.attack_fraction * ds.n_users)
        F = self.filler_size if self.filler_size is not None else max(1, int(round(ds.ratings.nnz / ds.n_users)))
        cfg = replace(self, attack_size=int(A), filler_size=int(F))
        cfg.validate(ds.n_items)
        return cfg

    def validate(self, n_items: int | None = None):
        if self.attack_size is not None and self.attack_size < 1:
            raise ValueError(f"attack_size must be >= 1, got {self.attack_size}")
        if self.filler_size is not None and (self.filler_size < 1 or (n_items is not None and self.filler_size > n_items)):
            raise ValueError(f"filler_size must be in [1, n_items], got {self.filler_size}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lam must lie in [0, 1], got {self.lam}")
        if n_items is not None and not 0 <= self.target_item < n_items:
            raise ValueError(f"target item {self.target_item} out of range")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AttackResult:
    fake_profiles: FakeProfileBatch
    loss_trace: list[dict] = field(default_factory=list)
    generator: RatingGenerator | None = None
    templates: TemplateMatrix | None = None
    config: AttackConfig | None = None
    state: AttackState | None = None

    def save(self, directory, item_ids=None) -> Path:
        """Run directory: config snapshot, loss trace CSV, fake profiles, generator checkpoint."""
        from .config import dump_flat

        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        if self.config is not None:
            (directory / "attack_config.txt").write_text(dump_flat({"attack": self.config.to_dict()}))
        with open(directory / "loss_trace.csv", "w", encoding="utf-8") as fh:
            cols = ["iteration", "L_trans", "L_imper", "L_total", "L_RS", "L_DE"]
            fh.write(",".join(cols) + "\n")
            for row in self.loss_trace:
                fh.write(",".join(repr(row[c]) if c != "iteration" else str(row[c]) for c in cols) + "\n")
        self.fake_profiles.to_jsonl(directory / "fake_profiles.jsonl", item_ids)
        if self.generator is not None:
            self.generator.save(directory / "generator.rtck")
        return directory


# ------------------------------------------------------------------ losses

def l_trans(predictions, t: int, K: int = 10, C: float = 0.01, exclude=None):
    """Transferability loss over target users (one row of ``predictions`` each).

    For users whose top-K list misses ``t`` the gaps ``exp(r_ui) - exp(r_ut)``
    over their top-K items are summed; the loss is ``log(sum + 1)``, or ``C``
    when every user already has ``t`` in the list.  ``exclude`` is a boolean
    mask of items removed from each user's candidate list.
    """
    preds = predictions if isinstance(predictions, torch.Tensor) else torch.as_tensor(np.asarray(predictions, dtype=np.float64))
    if preds.ndim != 2 or preds.shape[0] == 0:
        raise ValueError("l_trans needs at least one target user")
    values = preds.detach().cpu().double().numpy().copy()
    if exclude is not None:
        values[np.asarray(exclude, dtype=bool)] = -np.inf
    total = preds.new_zeros(())
    missed = 0
    for row in range(values.shape[0]):
        order = np.argsort(-values[row], kind="stable")[:K]
        if t in order:
            continue
        missed += 1
        idx = torch.as_tensor(order)
        total = total + (torch.exp(preds[row, idx]) - torch.exp(preds[row, t])).sum()
    if missed == 0:
        return preds.new_tensor(float(C))
    return torch.log(total + 1.0)


def l_imper(p_real) -> torch.Tensor:
    """Mean ``log(1 - P(real))`` over fake profiles, probabilities clamped to ``[EPS, 1 - EPS]``."""
    p = p_real if isinstance(p_real, torch.Tensor) else torch.as_tensor(np.asarray(p_real, dtype=np.float64))
    return torch.log1p(-p.clamp(EPS, 1 - EPS)).mean()


# ------------------------------------------------------------------ state

@dataclass
class AttackState:
    """Everything the alternation carries between iterations."""

    train: Dataset
    config: AttackConfig
    templates: TemplateMatrix
    generator: RatingGenerator
    backend: object
    surrogate: DeepCoNNPlusPlus | None = None
    detector: DetectorNet | None = None
    detector_opt: torch.optim.Optimizer | None = None
    generator_opt: torch.optim.Optimizer | None = None
    real_profiles: Profiles | None = None
    target_users: np.ndarray | None = None
    stale_reviews: dict = field(default_factory=dict)
    iteration: int = 0
    surrogate_history: list = field(default_factory=list)
    detector_history: list = field(default_factory=list)

    @property
    def m(self) -> int:
        return self.train.n_users


def current_fakes(state: AttackState) -> FakeRatingMatrix:
    cfg = state.config
    d = reconstruct(state.templates, state.generator, train_mode=False)
    return prune(d, state.templates, cfg.filler_size, cfg.target_item, state.train.scale)


def assemble_batch(state: AttackState, fakes: FakeRatingMatrix, *, fresh_reviews: bool) -> FakeProfileBatch:
    cfg = state.config
    if fresh_reviews or not state.stale_reviews:
        reviews = generate_reviews(state.backend, fakes, state.train, cfg.seed)
        if not state.stale_reviews:
            state.stale_reviews = dict(reviews)
    else:
        reviews = {(k, i): state.stale_reviews.get((k, i), "") for k, i in zip(*map(np.ndarray.tolist, np.nonzero(fakes.matrix)))}
    return FakeProfileBatch(fakes.matrix, reviews, cfg.target_item, "rtrojan")


def _new_surrogate(cfg: AttackConfig, seed: int) -> DeepCoNNPlusPlus:
    return DeepCoNNPlusPlus(
        dim=cfg.dim, n_filters=cfg.n_filters, filter_width=cfg.filter_width, doc_len=cfg.doc_len,
        word_dim=cfg.word_dim, embeddings=cfg.embeddings, epochs=cfg.initial_epochs,
        batch_size=cfg.batch_size, learning_rate=cfg.learning_rate, neg_ratio=cfg.neg_ratio,
        dropout=cfg.dropout, random_state=seed,
    )


def lower_level(state: AttackState, batch: FakeProfileBatch) -> tuple[float, float]:
    """Fit the surrogate on ``M* = [M; M~]`` and update the detector; returns (L_RS, L_DE)."""
    cfg = state.config
    seed = cfg.seed + 1000 * state.iteration
    poisoned = batch.inject(state.train) if batch.n_profiles else state.train
    first = state.surrogate is None or cfg.cold_start
    if first:
        state.surrogate = _new_surrogate(cfg, cfg.seed)
        state.surrogate.fit(poisoned, epochs=cfg.initial_epochs, seed=seed)
    else:
        state.surrogate.fit(poisoned, warm_start=True, epochs=cfg.lower_epochs, seed=seed)
    l_rs = state.surrogate.history_[-1] if state.surrogate.history_ else float("nan")
    state.surrogate_history.extend(state.surrogate.history_)

    if batch.n_profiles == 0:
        return l_rs, float("nan")
    vocab = state.surrogate.vocab_
    emb = state.surrogate.model_.user_cnn.embeddings.double().numpy()
    if state.detector is None:
        torch.manual_seed(cfg.seed + 1)
        state.detector = DetectorNet(state.train.n_items, emb, cfg.dim, cfg.n_filters, cfg.filter_width, state.train.scale[1])
        state.detector_opt = torch.optim.Adam(state.detector.parameters(), lr=cfg.learning_rate)
        state.real_profiles = profiles_from_dataset(state.train, vocab, emb, doc_len=cfg.doc_len)
    fake_profiles = profiles_from_fakes(batch, vocab, emb, cfg.doc_len)
    hist = train_detector(
        state.detector, state.real_profiles, fake_profiles, cfg.detector_steps, seed + 2,
        batch_size=cfg.batch_size, optimizer=state.detector_opt,
    )
    state.detector_history.extend(hist)
    return l_rs, (hist[-1] if hist else float("nan"))


@dataclass
class UpperContext:
    """Frozen lower-level quantities the generator loss reads."""

    surrogate: torch.nn.Module
    user_docs: torch.Tensor
    item_docs: torch.Tensor
    n_real: int
    target_users: torch.Tensor
    exclude: np.ndarray
    detector: torch.nn.Module | None
    fake_docs: torch.Tensor | None
    target_item: int
    K: int = 10
    C: float = 0.01
    lam: float = 0.5
    lookahead_lr: float = 1.0
    r_max: float = 5.0


def combined_loss(fake_ratings: torch.Tensor, ctx: UpperContext) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """``(total, L_trans, L_imper)`` with ``total = lam * L_trans + (1 - lam) * L_imper``."""
    zero = fake_ratings.new_zeros(())
    if ctx.lam > 0:
        model = ctx.surrogate
        params = {k: v for k, v in model.named_parameters()}
        A = fake_ratings.shape[0]
        fake_users = torch.arange(ctx.n_real, ctx.n_real + A)
        weights = fake_ratings / ctx.r_max
        logits = model(fake_users, None, ctx.user_docs, ctx.item_docs, all_pairs=True)
        support = (fake_ratings.detach() != 0).sum().clamp(min=1)
        fake_bce = (weights * torch.nn.functional.softplus(-logits)).sum() / support
        names = list(params)
        grads = torch.autograd.grad(fake_bce, [params[k] for k in names], create_graph=True, allow_unused=True)
        stepped = {k: (params[k] - ctx.lookahead_lr * g if g is not None else params[k]) for k, g in zip(names, grads)}
        preds = torch.sigmoid(
            functional_call(model, stepped, (ctx.target_users, None, ctx.user_docs, ctx.item_docs), {"all_pairs": True})
        )
        lt = l_trans(preds, ctx.target_item, ctx.K, ctx.C, ctx.exclude)
    else:
        lt = zero
    if ctx.lam < 1 and ctx.detector is not None:
        p_real = torch.sigmoid(ctx.detector(fake_ratings, ctx.fake_docs))
        li = l_imper(p_real)
    else:
        li = zero
    return ctx.lam * lt + (1 - ctx.lam) * li, lt, li


def build_context(state: AttackState, batch: FakeProfileBatch, rng: np.random.Generator) -> UpperContext:
    cfg = state.config
    sur = state.surrogate
    sur.model_.eval()
    if state.detector is not None:
        state.detector.eval()
    users = state.target_users
    if users.shape[0] > cfg.target_user_sample:
        users = np.sort(rng.choice(users, size=cfg.target_user_sample, replace=False))
    exclude = np.asarray(state.train.ratings[users].todense()) != 0
    fake_docs = None
    if state.detector is not None and batch.n_profiles:
        fp = profiles_from_fakes(batch, sur.vocab_, state.real_profiles.embeddings, cfg.doc_len)
        fake_docs = fp.doc_tensor(cfg.filter_width)
    return UpperContext(
        surrogate=sur.model_, user_docs=sur.user_docs_, item_docs=sur.item_docs_, n_real=state.m,
        target_users=torch.as_tensor(users), exclude=exclude, detector=state.detector, fake_docs=fake_docs,
        target_item=cfg.target_item, K=cfg.K, C=cfg.C, lam=cfg.lam, lookahead_lr=cfg.lookahead_lr,
        r_max=float(state.train.scale[1]),
    )


def upper_level_step(
    generator: RatingGenerator,
    templates: TemplateMatrix,
    ctx: UpperContext,
    F: int,
    scale,
    optimizer: torch.optim.Optimizer,
) -> tuple[float, float, float]:
    """One generator update on the combined loss (surrogate and detector frozen)."""
    frozen = [p for m in (ctx.surrogate, ctx.detector) if m is not None for p in m.parameters()]
    flags = [p.requires_grad for p in frozen]
    generator.train()
    dtype = next(generator.parameters()).dtype
    e = torch.as_tensor(templates.rows, dtype=dtype)
    try:
        fake = prune_ste(generator(e), e, F, ctx.target_item, scale)
        total, lt, li = combined_loss(fake, ctx)
        for p in frozen:
            p.requires_grad_(False)
        optimizer.zero_grad()
        if total.requires_grad:
            total.backward()
        for name, p in generator.named_parameters():
            if p.grad is not None and not torch.isfinite(p.grad).all():
                raise FloatingPointError(f"non-finite generator gradient in {name} (loss={total.item()})")
        optimizer.step()
    finally:
        for p, f in zip(frozen, flags):
            p.requires_grad_(f)
    generator.eval()
    return total.item(), lt.item(), li.item()


def run_attack(data: SplitDataset | Dataset, config: AttackConfig, backend=None) -> AttackResult:
    """Alternate lower-level fitting and generator steps, then emit the final fake profiles."""
    train = data.train if isinstance(data, SplitDataset) else data
    cfg = config.resolve(train)
    backend = backend if backend is not None else TemplateBackend()
    templates = rank_templates(train, cfg.target_item, cfg.attack_size)
    torch.manual_seed(cfg.seed)
    generator = RatingGenerator(train.n_items, train.scale, cfg.generator_layers, cfg.dropout)
    if cfg.pretrain_epochs:
        pretrain_generator(generator, train.ratings, epochs=cfg.pretrain_epochs, lr=cfg.pretrain_lr, seed=cfg.seed)
    generator.eval()
    col = np.asarray(train.ratings[:, cfg.target_item].todense()).ravel()
    state = AttackState(train, cfg, templates, generator, backend, target_users=np.flatnonzero(col == 0))
    if state.target_users.size == 0:
        raise ValueError("no target users: every user already interacted with the target item")
    state.generator_opt = torch.optim.Adam(generator.parameters(), lr=cfg.generator_lr)
    rng = np.random.default_rng(cfg.seed + 17)

    trace = []
    for it in range(cfg.outer_iterations):
        state.iteration = it
        batch = assemble_batch(state, current_fakes(state), fresh_reviews=cfg.regenerate_reviews)
        l_rs, l_de = lower_level(state, batch)
        ctx = build_context(state, batch, rng)
        for _ in range(cfg.generator_steps):
            total, lt, li = upper_level_step(generator, templates, ctx, cfg.filler_size, train.scale, state.generator_opt)
        trace.append({"iteration": it, "L_trans": lt, "L_imper": li, "L_total": total, "L_RS": l_rs, "L_DE": l_de})
        logger.info("iter %d  L_trans %.4f  L_imper %.4f  total %.4f  L_RS %.4f  L_DE %.4f", it, lt, li, total, l_rs, l_de)

    final = current_fakes(state)
    reviews = generate_reviews(backend, final, train, cfg.seed)
    batch = FakeProfileBatch(final.matrix, reviews, cfg.target_item, "rtrojan")
    return AttackResult(batch, trace, generator, templates, cfg, state)


class RTrojan(BaseEstimator):
    """Review-incorporated profile-injection attack as an estimator.

    ``fit`` runs the bi-level training on the attacker-visible training data;
    ``generate`` returns the final :class:`FakeProfileBatch`.
    """

    def __init__(self, target_item=0, attack_size=None, filler_size=None, lam=0.5, K=10, outer_iterations=10,
                 backend=None, config_overrides=None, random_state=0):
        self.target_item = target_item
        self.attack_size = attack_size
        self.filler_size = filler_size
        self.lam = lam
        self.K = K
        self.outer_iterations = outer_iterations
        self.backend = backend
        self.config_overrides = config_overrides
        self.random_state = random_state

    def _config(self) -> AttackConfig:
        return AttackConfig(
            target_item=self.target_item, attack_size=self.attack_size, filler_size=self.filler_size, lam=self.lam,
            K=self.K, outer_iterations=self.outer_iterations, seed=self.random_state, **(self.config_overrides or {}),
        )

    def fit(self, X, y=None):
        self.result_ = run_attack(X, self._config(), self.backend)
        self.loss_trace_ = self.result_.loss_trace
        return self

    def generate(self) -> FakeProfileBatch:
        check_fitted(self, "result_")
        return self.result_.fake_profiles

    def fit_generate(self, X, y=None) -> FakeProfileBatch:
        return self.fit(X).generate()
