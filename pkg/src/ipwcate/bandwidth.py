"""Rule-of-thumb bandwidths and kernel orders.

All bandwidths take the form ``h = a * n**(-eta)``. The CATE bandwidth and
the order of its kernel follow the propensity dimension: with ``d`` the
dimension the propensity score is smoothed over (``r`` for the reduced index,
``k_tilde`` for the nonparametric fit),

    eta   = 1 / (l + 4 + 2 d + 2 delta_d)
    s     = d + delta_d + 2
    eta_p = 1 / (2 d + delta_d)          (propensity bandwidth)

where ``delta_d`` is 1 for odd ``d`` and 0 otherwise. ``table`` mode
restricts ``k_tilde`` to the published grid {1, 2, 4}.
"""

from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Optional

GROUP_PRESETS = {
    "G1": {"a": 0.55, "a1": 1.05, "a2": 0.75},
    "G2": {"a": 0.55, "a1": 1.05, "a2": 0.69},
}
TABLE_K_TILDE = (1, 2, 4)
SUPPORTED_ORDERS = (2, 4, 6)


@dataclass(frozen=True)
class BandwidthPlan:
    n: int
    l: int
    h: float
    s: int
    eta: Fraction
    a: float
    delta_r: Optional[int] = None
    h1: Optional[float] = None
    s1: Optional[int] = None
    eta1: Optional[Fraction] = None
    a1: Optional[float] = None
    h2: Optional[float] = None
    s2: Optional[int] = None
    eta2: Optional[Fraction] = None
    a2: Optional[float] = None
    r: Optional[int] = None
    k_tilde: Optional[int] = None
    delta_1: float = 0.0
    delta_2: float = 0.0
    mode: str = "table"

    def to_dict(self):
        out = asdict(self)
        for key in ("eta", "eta1", "eta2"):
            if out[key] is not None:
                out[key] = str(out[key])
        return out


def parity_delta(d):
    return d % 2


def _order_for(d):
    return d + parity_delta(d) + 2


def _smallest_order(condition):
    for s in SUPPORTED_ORDERS:
        if condition(s):
            return s
    raise ValueError("no supported kernel order satisfies the bandwidth conditions")


def plan_bandwidths(n, l=1, r=None, k_tilde=None, a=0.55, a1=1.05, a2=0.75, mode="table",
                    s=None, s1=None, s2=None):
    """Bandwidths and kernel orders for sample size ``n`` and ``l = dim(Z)``.

    ``r`` drives the reduced-index bandwidth ``h2`` (order ``s2 = r + delta_r``);
    ``k_tilde`` drives the nonparametric propensity bandwidth ``h1``. When both
    are given, the CATE bandwidth and its order follow ``k_tilde``, since the
    same ``(h, s)`` is shared by every estimator and ``r <= k_tilde``.
    Explicit ``s``, ``s1`` or ``s2`` override the rule-based kernel orders
    (rates are unchanged).
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    if l < 1:
        raise ValueError("l must be a positive integer")
    if r is None and k_tilde is None:
        raise ValueError("supply at least one of r and k_tilde")
    if mode not in ("table", "formula"):
        raise ValueError(f"unknown bandwidth mode {mode!r}")
    if mode == "table" and k_tilde is not None and k_tilde not in TABLE_K_TILDE:
        raise ValueError(f"k_tilde={k_tilde} is not in the published table {TABLE_K_TILDE}; "
                         "use mode='formula'")
    if min(a, a1, a2) <= 0:
        raise ValueError("bandwidth constants must be positive")

    kw = {}
    driver = k_tilde if k_tilde is not None else r
    eta = Fraction(1, l + 4 + 2 * driver + 2 * parity_delta(driver))
    s_rule = _order_for(driver)
    if r is not None:
        if r < 1:
            raise ValueError("r must be a positive integer")
        delta_r = parity_delta(r)
        eta2 = Fraction(1, 2 * r + delta_r)
        kw.update(delta_r=delta_r, h2=a2 * n ** -float(eta2), s2=s2 or r + delta_r, eta2=eta2,
                  a2=a2, r=r)
        s_rule = max(s_rule, _order_for(r))
    if k_tilde is not None:
        if k_tilde < 1:
            raise ValueError("k_tilde must be a positive integer")
        eta1 = Fraction(1, 2 * k_tilde + parity_delta(k_tilde))
        # smallest order with n h^l h1^(2 s1) -> 0
        if s1 is None:
            s1 = _smallest_order(lambda q: 1 - l * eta - 2 * q * eta1 < 0)
        kw.update(h1=a1 * n ** -float(eta1), s1=s1, eta1=eta1, a1=a1, k_tilde=k_tilde)
    s = s_rule if s is None else s
    for order in (s, kw.get("s1"), kw.get("s2")):
        if order is not None and order not in SUPPORTED_ORDERS:
            raise ValueError(f"kernel order {order} is not supported; choose from {SUPPORTED_ORDERS}")
    if s not in SUPPORTED_ORDERS:
        raise ValueError(f"required kernel order {s} exceeds the supported orders")
    return BandwidthPlan(n=n, l=l, h=a * n ** -float(eta), s=s, eta=eta, a=a, mode=mode, **kw)


def plan_for_group(n, group, l=1, r=None, k_tilde=None, mode="table"):
    try:
        consts = GROUP_PRESETS[group]
    except KeyError:
        raise ValueError(f"unknown group {group!r}; expected one of {sorted(GROUP_PRESETS)}")
    return plan_bandwidths(n, l=l, r=r, k_tilde=k_tilde, mode=mode, **consts)


def rate_conditions(plan):
    """Exponent checks of the bandwidth conditions for the planned rates.

    With ``h ~ n^-eta``: ``n h^l -> inf`` iff ``l eta < 1`` and
    ``n h^(2s+l) -> 0`` iff ``(2s+l) eta > 1``. With the slack constants
    ``delta_1 = delta_2 = 0`` the planned rate sits exactly on the boundary
    ``(2s+l) eta = 1``; any positive slack makes it strict, so the check
    reports both.
    """
    eta = plan.eta
    out = {
        "nh_l_diverges": plan.l * eta < 1,
        "undersmoothing_boundary": (2 * plan.s + plan.l) * eta >= 1,
        "undersmoothing_strict": (2 * plan.s + plan.l) * eta > 1,
    }
    for tag, e, q in (("h1", plan.eta1, plan.s1), ("h2", plan.eta2, plan.s2)):
        if e is not None:
            out[f"{tag}_bias_negligible"] = 1 - plan.l * eta - 2 * q * e < 0
    return out
