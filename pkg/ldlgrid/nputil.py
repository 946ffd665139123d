"""
Functions that work on numpy objects.
"""

import numpy as np


def argsearch(needles, haystack):
    """
    Index of each needle in haystack, like joining two DB tables on a key column.
    haystack values must be unique.
    :return: masked integer array, masked where the needle is absent
    """
    needles = np.asarray(needles)
    haystack = np.asarray(haystack)
    if haystack.size == 0:
        return np.ma.array(
            np.zeros(needles.shape, dtype=int), mask=np.ones(needles.shape, dtype=bool)
        )
    order = np.argsort(haystack)
    needle_index = np.take(order, np.searchsorted(haystack[order], needles), mode="clip")
    return np.ma.array(needle_index, mask=haystack[needle_index] != needles)


def index_of(needles, haystack, what="id"):
    """
    argsearch that refuses missing values
    :raises KeyError: naming every missing needle
    """
    found = argsearch(needles, haystack)
    if np.ma.is_masked(found):
        missing = np.asarray(needles)[np.ma.getmaskarray(found)]
        raise KeyError(f"unknown {what}(s): {sorted(missing.tolist())}")
    return np.asarray(found.data, dtype=int)


def scatter_add(index, values, size):
    """
    Sum values into a length-size array at index, repeated indices accumulate.
    Same result as np.add.at on a zero array, through bincount.
    """
    index = np.asarray(index, dtype=int)
    values = np.asarray(values)
    if np.iscomplexobj(values):
        return np.bincount(index, weights=values.real, minlength=size) + 1j * np.bincount(
            index, weights=values.imag, minlength=size
        )
    return np.bincount(index, weights=values.astype(float), minlength=size)
