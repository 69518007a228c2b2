"""scikit-learn style facade: ``fit`` fine-tunes on one clip, ``transform`` edits."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_clip, check_masks, check_skeletons
from .codec import LatentCodec
from .metrics import compare_clips
from .pipeline import edit_clip
from .skeleton import gen_scene, make_mask
from .training import (
    PretrainConfig,
    TrainConfig,
    Trainer,
    TrainingClip,
    load_checkpoint,
    model_from_checkpoint,
    pretrain,
    random_scene_specs,
)
from .unet import Backbone, UNetConfig


class MotionEditor(BaseEstimator, TransformerMixin):
    """One-shot motion editor.

    Parameters
    ----------
    lr, iters_stage1, iters_stage2 : fine-tuning schedule.
    ddim_steps : DDIM steps used for inversion and sampling.
    base_checkpoint : path of a pre-trained backbone; overrides the model keywords.
    pretrain_steps : broad denoising pre-training run before fine-tuning when
        no ``base_checkpoint`` is given (0 disables it).
    base_channels, seed : backbone width and initialisation seed.
    apply_offset : map reference skeletons onto the subject before sampling.
    """

    def __init__(self, lr=3e-5, iters_stage1=300, iters_stage2=300, ddim_steps=50,
                 base_checkpoint=None, pretrain_steps=0, base_channels=32, seed=0,
                 apply_offset=True, codec="pool2"):
        self.lr = lr
        self.iters_stage1 = iters_stage1
        self.iters_stage2 = iters_stage2
        self.ddim_steps = ddim_steps
        self.base_checkpoint = base_checkpoint
        self.pretrain_steps = pretrain_steps
        self.base_channels = base_channels
        self.seed = seed
        self.apply_offset = apply_offset
        self.codec = codec

    def _train_config(self) -> TrainConfig:
        return TrainConfig(lr=self.lr, iters_stage1=self.iters_stage1, iters_stage2=self.iters_stage2,
                           seed=self.seed, codec=self.codec)

    def _build_model(self, frames: np.ndarray) -> Backbone:
        if self.base_checkpoint is not None:
            return model_from_checkpoint(load_checkpoint(self.base_checkpoint))
        f = LatentCodec(self.codec).factor
        cfg = UNetConfig(frames=frames.shape[0], latent_size=(frames.shape[2] // f, frames.shape[3] // f),
                         base_channels=self.base_channels, control_stride=f, seed=self.seed)
        model = Backbone(cfg)
        if self.pretrain_steps:
            pc = PretrainConfig(steps=self.pretrain_steps)
            specs = random_scene_specs(pc.scenes, pc.seed, cfg.frames, cfg.image_size)
            pretrain(model, [gen_scene(s) for s in specs], pc, LatentCodec(self.codec), log_every=0)
        return model

    def fit(self, X, y=None, *, skeletons, masks=None, prompt="figure"):
        """Fine-tune on the clip ``X`` ``[F, 3, H, W]`` with its skeletons.

        Without ``masks`` the foreground masks are derived from the skeletons.
        """
        frames = check_clip(X)
        skeletons = check_skeletons(skeletons, frames.shape[0])
        if masks is None:
            masks = np.stack([make_mask(skeletons[i], frames.shape[2:]) for i in range(len(skeletons))])
        masks = check_masks(masks, frames)
        cfg = self._train_config()
        trainer = Trainer(self._build_model(frames), [TrainingClip(frames, masks, skeletons, prompt)], cfg)
        self.checkpoint_ = trainer.run(log_every=0)
        self.model_ = trainer.model
        self.loss_log_ = list(self.checkpoint_.loss_log)
        self.skeletons_ = skeletons
        self.prompt_ = prompt
        self.n_frames_ = frames.shape[0]
        return self

    def _edit(self, frames, reference, source, apply_offset):
        return edit_clip(self.model_, frames, reference, self.prompt_, self._train_config().schedule(),
                         self.ddim_steps, source=source, apply_offset=apply_offset,
                         codec=LatentCodec(self.codec)).frames

    def transform(self, X, reference=None, source=None):
        """Edit ``X`` to follow ``reference`` skeletons (default: the fitted ones).

        ``source`` gives the subject's own skeletons for the offset; it defaults
        to the skeletons seen in ``fit``.
        """
        check_is_fitted(self, "model_")
        frames = check_clip(X)
        reference = self.skeletons_ if reference is None else check_skeletons(reference, name="reference")
        source = self.skeletons_ if source is None else check_skeletons(source, name="source")
        return self._edit(frames, reference, source, self.apply_offset)

    def score(self, X, y=None):
        """Mean PSNR of the self-reconstruction against the codec round trip of ``X``."""
        check_is_fitted(self, "model_")
        frames = check_clip(X)
        recon = self._edit(frames, self.skeletons_, self.skeletons_, False)
        return compare_clips(recon, LatentCodec(self.codec).roundtrip(frames)).mean_psnr
