from .base import AttackConfig, AttackResult, anchors_as_targets, project_and_clip, signed
from .proposal import (dag_attack, dag_config, feature_loss, proposal_attention, rap_attack, rap_config,
                       uea_feature_loss, uea_feature_loss_tensor)
from .tog import (mislabel_targets, select_target_class, tog_fabrication, tog_mislabeling, tog_untargeted,
                  tog_vanishing)
from .proposal import DAG_DEFAULTS, RAP_DEFAULTS
from .universal import UNIVERSAL_DEFAULTS, UniversalPerturbation, apply_universal, tog_universal_train, universal_config

ATTACKS = {
    "tog-untargeted": tog_untargeted,
    "tog-vanishing": tog_vanishing,
    "tog-fabrication": tog_fabrication,
    "tog-mislabeling": tog_mislabeling,
    "dag": dag_attack,
    "rap": rap_attack,
}

# per-attack overrides applied on top of AttackConfig defaults
ATTACK_DEFAULTS = {
    "dag": DAG_DEFAULTS,
    "rap": RAP_DEFAULTS,
    "tog-universal": UNIVERSAL_DEFAULTS,
}


def default_config(name: str, **overrides) -> AttackConfig:
    return AttackConfig(**{**ATTACK_DEFAULTS.get(name, {}), **overrides})


def get_attack(name: str):
    from ..errors import ValidationError

    try:
        return ATTACKS[name]
    except KeyError:
        raise ValidationError(f"unknown attack {name!r}; valid names: {', '.join(sorted(ATTACKS))}") from None


__all__ = [
    "ATTACKS", "ATTACK_DEFAULTS", "AttackConfig", "AttackResult", "UniversalPerturbation", "anchors_as_targets",
    "apply_universal", "dag_attack", "dag_config", "default_config", "feature_loss", "get_attack",
    "mislabel_targets", "project_and_clip", "proposal_attention", "rap_attack", "rap_config", "select_target_class",
    "signed", "tog_fabrication", "tog_mislabeling", "tog_universal_train", "tog_untargeted", "tog_vanishing",
    "uea_feature_loss", "uea_feature_loss_tensor", "universal_config",
]
