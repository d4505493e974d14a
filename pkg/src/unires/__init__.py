"""Multi-expert diffusion image restoration with per-image weight search."""

__version__ = "0.1.0"

# lazy re-exports (PEP 562) keep `import unires` light; the torch-backed
# predictor module loads only when first touched
_EXPORTS = {
    "combine": ["WeightVector", "cfg_weights", "combine", "format_weights",
                "make_downlq_condition", "one_hot", "parse_weights",
                "restore", "with_prompt_extension"],
    "conditions": ["Condition", "TASK_VOCAB", "task_index"],
    "diffusion": ["NoiseSchedule", "SamplerConfig", "ddim_sample",
                  "ddim_step", "forward_diffuse", "make_schedule",
                  "training_loss"],
    "images": ["adain_correct", "channel_stats", "load_image",
               "resample_bicubic", "save_image"],
    "predictors": ["AnalyticGaussianPredictor", "TinyCondDenoiser",
                   "TrainConfig", "gradient_check", "load_checkpoint",
                   "save_checkpoint", "train"],
    "quality": ["psnr", "sharpness_noise_proxy", "ssim"],
    "search": ["GridSpec", "RestoreContext", "SearchResult",
               "enumerate_grid", "grid_search", "predict_weights",
               "preset_weights", "reduced_search", "tally_weights"],
}

_ORIGIN = {name: mod for mod, names in _EXPORTS.items() for name in names}

__all__ = sorted(_ORIGIN) + ["__version__"]


def __getattr__(name):
    if name in _ORIGIN:
        from importlib import import_module
        return getattr(import_module(f".{_ORIGIN[name]}", __name__), name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return __all__
