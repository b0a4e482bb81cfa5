"""Named allocator presets used throughout the evaluation protocol."""

from __future__ import annotations

from avmp.allocators import AllocatorConfig, AllocatorVariant
from avmp.errors import ConfigError

STAGE1_BATCH_SIZES = (1, 2, 4, 8, 16, 32, 64, 128, 256)

# Stage 2 sweeps the trigger thresholds at fixed B=128.
STAGE2_THRESHOLDS = (
    ("avmp_dynamic_b128", 0.05, 0.30),
    ("avmp_dynamic_b128_th_high_010", 0.05, 0.10),
    ("avmp_dynamic_b128_th_high_020", 0.05, 0.20),
    ("avmp_dynamic_b128_th_low_002", 0.02, 0.30),
    ("avmp_dynamic_b128_th_low_010", 0.10, 0.30),
)


def dynamic_config(batch_size: int = 128, threshold_low: float = 0.05,
                   threshold_high: float = 0.30,
                   ratio: float = 0.5) -> AllocatorConfig:
    return AllocatorConfig(
        variant=AllocatorVariant.AVMP_DYNAMIC,
        mamba_full_memory_ratio=ratio,
        migration_batch_size=batch_size,
        threshold_low=threshold_low,
        threshold_high=threshold_high,
        min_rebalance_interval_ops=1000,
    )


def _base_presets() -> dict[str, AllocatorConfig]:
    presets = {
        "padded_unified": AllocatorConfig(variant=AllocatorVariant.PADDED_UNIFIED),
        "fixed_dual_mr05": AllocatorConfig(
            variant=AllocatorVariant.FIXED_DUAL, mamba_full_memory_ratio=0.5),
        "fixed_dual_mr09": AllocatorConfig(
            variant=AllocatorVariant.FIXED_DUAL, mamba_full_memory_ratio=0.9),
        "avmp_static_mr05": AllocatorConfig(
            variant=AllocatorVariant.AVMP_STATIC, mamba_full_memory_ratio=0.5),
        "avmp_dynamic_b128": dynamic_config(128),
    }
    for b in STAGE1_BATCH_SIZES:
        presets.setdefault(f"avmp_dynamic_b{b}", dynamic_config(b))
    for label, low, high in STAGE2_THRESHOLDS:
        presets.setdefault(label, dynamic_config(128, low, high))
    return presets


VARIANT_PRESETS = _base_presets()


def resolve_variant(entry) -> tuple[str, AllocatorConfig]:
    """Accept either a preset name or an inline {label, allocator} object."""
    if isinstance(entry, str):
        preset = VARIANT_PRESETS.get(entry)
        if preset is None:
            raise ConfigError(
                f"unknown variant preset {entry!r} "
                f"(known: {', '.join(sorted(VARIANT_PRESETS))})")
        return entry, preset
    if isinstance(entry, dict) and "label" in entry and "allocator" in entry:
        return entry["label"], AllocatorConfig.from_dict(entry["allocator"])
    raise ConfigError(f"cannot interpret variant entry {entry!r}")
