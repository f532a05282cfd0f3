"""Time-window bookkeeping for a pair of staggered cohorts.

Both cohorts share the same pre/post lengths. The earlier cohort is called
gamma, the later one nu, and ``delta`` is the number of occasions between
their policy dates.
"""

from __future__ import annotations

from dataclasses import dataclass, astuple
from fractions import Fraction
import numbers


def _pos(x):
    return x if x > 0 else 0


def _check_lengths(T_pre, T_post, delta=0):
    for name, val in (("T_pre", T_pre), ("T_post", T_post), ("delta", delta)):
        if isinstance(val, bool) or not isinstance(val, numbers.Integral):
            raise TypeError(f"{name} must be an integer occasion count, got {val!r}")
    if T_pre < 1 or T_post < 1:
        raise ValueError("T_pre and T_post must be >= 1")
    if delta < 0:
        raise ValueError("delta must be nonnegative")


def overlap_min(T_pre, T_post, delta):
    """min(T_pre, T_post, delta, (T_pre + T_post - delta)_+)."""
    return min(T_pre, T_post, delta, _pos(T_pre + T_post - delta))


def time_factor_numerator(T_pre, T_post, delta):
    """Integer numerator of the time factor (the quantity called g1).

    Returns ``T_pre^2 (T_post - d)_+ + T_post^2 (T_pre - d)_+
    - T_pre T_post min(...)`` as an exact integer.
    """
    _check_lengths(T_pre, T_post, delta)
    return (T_pre ** 2 * _pos(T_post - delta)
            + T_post ** 2 * _pos(T_pre - delta)
            - T_pre * T_post * overlap_min(T_pre, T_post, delta))


def time_factor(T_pre, T_post, delta):
    """Time factor scaling the between-cohort covariance.

    Parameters
    ----------
    T_pre, T_post : int
        Pre- and post-period lengths (occasions), both >= 1.
    delta : int
        Occasions between the two policy dates.

    Returns
    -------
    float
        ``g1 / (T_pre T_post)^2``. Zero once the study periods no longer
        overlap (``delta >= T_pre + T_post``).

    Examples
    --------
    >>> round(time_factor(48, 36, 16), 4)
    0.0201
    """
    num = time_factor_numerator(T_pre, T_post, delta)
    return float(Fraction(num, (T_pre * T_post) ** 2))


def time_factor_zeros(T_pre, T_post):
    """Roots of the time factor in delta.

    Returns
    -------
    delta_star : float
        Interior sign change, where the factor turns from positive to negative.
    delta_dagger : int
        ``T_pre + T_post``, beyond which the factor is identically zero.
    """
    _check_lengths(T_pre, T_post)
    a, b = T_pre, T_post
    # on the middle branch, g1 is linear in delta and vanishes here
    star = Fraction(a * a * b + a * b * b, a * a + a * b + b * b)
    return float(star), a + b


@dataclass(frozen=True)
class WindowDurations:
    """Durations of the disjoint calendar windows for a cohort pair.

    ``t_x_y`` counts occasions where gamma is in period ``x`` and nu is in
    period ``y``; ``dot`` means outside that cohort's study period.
    """

    t_pre_pre: int
    t_post_post: int
    t_post_pre: int
    t_pre_dot: int
    t_post_dot: int
    t_dot_pre: int
    t_dot_post: int

    def as_tuple(self):
        return astuple(self)


def window_durations(T_pre, T_post, delta):
    """Closed-form window durations for a cohort pair.

    Examples
    --------
    >>> w = window_durations(48, 36, 16)
    >>> w.t_pre_pre, w.t_post_post, w.t_post_pre
    (32, 20, 16)
    """
    _check_lengths(T_pre, T_post, delta)
    a, b, d = T_pre, T_post, delta
    return WindowDurations(
        t_pre_pre=_pos(a - d),
        t_post_post=_pos(b - d),
        t_post_pre=overlap_min(a, b, d),
        t_pre_dot=min(a, d),
        t_post_dot=min(_pos(d - a), b),
        # capped so the window stays inside nu's pre-period when the
        # two studies do not touch at all
        t_dot_pre=min(_pos(d - b), a),
        t_dot_post=min(b, d),
    )


def window_durations_bruteforce(T_pre, T_post, delta):
    """Count the windows by walking the calendar; used as a test oracle."""
    _check_lengths(T_pre, T_post, delta)

    def status(t, start):
        if start - T_pre <= t < start:
            return "pre"
        if start <= t < start + T_post:
            return "post"
        return "dot"

    counts = dict.fromkeys(("pre_pre", "post_post", "post_pre", "pre_dot",
                            "post_dot", "dot_pre", "dot_post"), 0)
    for t in range(-T_pre, delta + T_post):
        key = f"{status(t, 0)}_{status(t, delta)}"
        if key in counts:
            counts[key] += 1
    return WindowDurations(**{f"t_{k}": v for k, v in counts.items()})
