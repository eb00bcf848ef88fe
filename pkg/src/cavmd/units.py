"""Unit conventions.

Everything internal is in Hartree atomic units (energies in hartree,
lengths in bohr, time in a.u. of time, hbar = 1).  Frequencies cross the
user boundary in millihartree because that is the natural scale of the
vibrational spectra; these two helpers are the only conversion in the
code base.
"""

MILLIHARTREE = 1.0e-3


def mh_to_hartree(value_mh: float) -> float:
    return value_mh * MILLIHARTREE


def hartree_to_mh(value_hartree: float) -> float:
    return value_hartree / MILLIHARTREE
