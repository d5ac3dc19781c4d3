"""
Package logger, variant discovery and seed derivation.

"""

import inspect
import logging
from typing import List, Type

import numpy as np

from . import errors, generic

logger = logging.getLogger("bpinn-ageing")
handler = logging.StreamHandler()
formatter = logging.Formatter("%(levelname)s: %(message)s")
handler.setFormatter(formatter)
logger.addHandler(handler)
logger.setLevel(logging.INFO)


def get_variants() -> List[Type["generic.Variant"]]:
    """This method provides a list of all variants implemented by
    bpinn_ageing.

    :return: A :py:class:`list` containing implemented variant classes
        all inheriting from the super class
        :py:class:`bpinn_ageing.generic.Variant`

    :rtype: :py:class:`list`
    """

    # recursively get all concrete subclasses
    def get_subclasses(variant):
        sub_classes = []
        if not inspect.isabstract(variant):
            sub_classes.append(variant)

        for sub_class in variant.__subclasses__():
            sub_classes.extend(get_subclasses(sub_class))
        return sub_classes

    return get_subclasses(generic.Variant)


def get_variant(variant_name: str) -> Type["generic.Variant"]:
    """
    This method returns the variant class from a variant name or alias.
    Dashes and underscores are interchangeable: ``bpinn-hetero`` and
    ``bpinn_hetero`` name the same class.

    :param variant_name: a string naming one of the supported variants
    :raises bpinn_ageing.errors.ValidationError: no variant matches
    :rtype: :py:class:`type`
    """
    variants = get_variants()
    for variant in variants:
        if variant.matches(variant_name):
            return variant
    names = ", ".join(sorted(v.name.replace("_", "-") for v in variants))
    raise errors.ValidationError(f"unknown variant {variant_name!r}. Available: {names}")


def derive_seed(base: int, *keys: int) -> int:
    """A 32-bit seed determined by ``base`` and the integer ``keys``.

    Different key tuples give unrelated streams; the same tuple always gives
    the same seed.
    """
    sequence = np.random.SeedSequence([int(base)] + [int(k) for k in keys])
    return int(sequence.generate_state(1)[0])
