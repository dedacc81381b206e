"""Mark-0 state and the exact per-step update.

The hot path is a set of small ``numba`` kernels that operate on
struct-of-arrays firm data plus a one-row structured array holding every
scalar (households, bank, central bank, macro trackers).  The same kernels
are callable from Python, which is how the unit tests exercise each
operation in isolation.

RNG contract
------------
One ``numpy.random.Generator(PCG64(seed))`` per run.  Initialization draws
one uniform for ``Y0`` then three per firm in index order (price,
production, cash).  Within a step, uniforms are drawn only where a rule
consumes one, in firm index order:

* firm-update block, per surviving active firm: one for the wage shock if a
  wage branch fires, then one for the price shock if a price branch fires;
* revival block, per inactive firm: one revival coin, then one for the
  revived production if the coin succeeds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from mark0.params import ModelParams, params_record

PRICE_FLOOR = 1e-300

# halt codes returned by the kernels
OK = 0
FULL_COLLAPSE = 1
COLLAPSE_DETECTED = 2
HYPER_INFLATION = 3
HYPER_DEFLATION = 4

HALT_REASONS = {
    FULL_COLLAPSE: "FullCollapse",
    COLLAPSE_DETECTED: "CollapseDetected",
    HYPER_INFLATION: "HyperInflation",
    HYPER_DEFLATION: "HyperDeflation",
}


class Halt(Exception):
    """A run cannot continue; ``reason`` is one of :data:`HALT_REASONS`."""

    def __init__(self, reason: str, t: int):
        super().__init__(f"{reason} at step {t}")
        self.reason = reason
        self.t = t


class FullCollapse(Halt):
    pass


class CollapseDetected(Halt):
    pass


class Overflow(Halt):
    """Price level left the representable range (hyper-inflation or -deflation)."""


_HALT_CLASSES = {
    FULL_COLLAPSE: FullCollapse,
    COLLAPSE_DETECTED: CollapseDetected,
    HYPER_INFLATION: Overflow,
    HYPER_DEFLATION: Overflow,
}

SCALARS_DTYPE = np.dtype(
    [
        ("t", "i8"),
        # households
        ("S", "f8"),
        ("C_B", "f8"),
        ("C", "f8"),
        # bank and central bank
        ("rho0", "f8"),
        ("rho_l", "f8"),
        ("rho_d", "f8"),
        ("defaults_D", "f8"),
        ("E_plus", "f8"),
        ("E_minus", "f8"),
        # macro
        ("p_bar", "f8"),
        ("w_bar", "f8"),
        ("u", "f8"),
        ("epsilon", "f8"),
        ("pi", "f8"),
        ("pi_ema", "f8"),
        ("rho_d_ema", "f8"),
        ("rho_l_ema", "f8"),
        ("u_ema", "f8"),
        ("pi_hat", "f8"),
        ("Gamma", "f8"),
        # bookkeeping for the step record
        ("n_defaults", "i8"),
        ("n_revived", "i8"),
        ("n_active", "i8"),
        ("money_total", "f8"),
    ]
)

RECORD_DTYPE = np.dtype(
    [
        ("t", "i8"),
        ("p_bar", "f8"),
        ("w_bar", "f8"),
        ("u", "f8"),
        ("pi", "f8"),
        ("pi_ema", "f8"),
        ("pi_hat", "f8"),
        ("rho0", "f8"),
        ("rho_l", "f8"),
        ("rho_d", "f8"),
        ("rho_d_ema", "f8"),
        ("rho_l_ema", "f8"),
        ("u_ema", "f8"),
        ("Gamma", "f8"),
        ("S", "f8"),
        ("C_B", "f8"),
        ("C", "f8"),
        ("n_defaults", "i8"),
        ("n_active", "i8"),
        ("money_total", "f8"),
    ]
)

_njit = numba.njit(cache=True, error_model="numpy")


# --------------------------------------------------------------------------
# scalar rules
# --------------------------------------------------------------------------


@_njit
def clip01(x):
    return min(max(x, 0.0), 1.0)


@_njit
def update_ema(prev, x, omega):
    return omega * x + (1.0 - omega) * prev


@_njit
def form_expected_inflation(pi_ema, tau_R, tau_T, pi_star):
    return tau_R * pi_ema + tau_T * pi_star


@_njit
def taylor_rate(pi_ema, rho_star, phi_pi, pi_star, zlb_enabled):
    rho0 = rho_star + phi_pi * (pi_ema - pi_star)
    if zlb_enabled and rho0 < 0.0:
        rho0 = 0.0
    return rho0


@_njit
def fragility_sensitivity(rho_l_ema, pi_hat, alpha_gamma, gamma0):
    return max(alpha_gamma * (rho_l_ema - pi_hat), gamma0)


@_njit
def firm_default_check(cash, payroll, theta):
    """True if the firm survives.

    A firm with no payroll defaults iff it holds debt (fragility taken as +inf).
    """
    if payroll > 0.0:
        return cash > -theta * payroll
    return cash >= 0.0


@_njit
def fragility(cash, payroll):
    """Debt-to-payroll ratio; zero for a surviving firm without payroll."""
    if payroll > 0.0:
        return -cash / payroll
    return 0.0


@_njit
def hiring_firing_rates(phi, Gamma, eta0_plus, eta0_minus):
    eta_plus = clip01(eta0_plus * (1.0 - Gamma * phi))
    eta_minus = clip01(eta0_minus * (1.0 + Gamma * phi))
    return eta_plus, eta_minus


@_njit
def wage_shock_needed(prod, demand, profit):
    return (prod < demand and profit > 0.0) or (prod > demand and profit < 0.0)


@_njit
def price_shock_needed(price, prod, demand, p_bar):
    return (prod < demand and price < p_bar) or (prod > demand and price > p_bar)


@_njit
def update_wage(wage, price, prod, demand, cash, profit, u, epsilon, Gamma, phi,
                pi_hat, rho_d, rho_l, gamma, g_index, xi):
    if prod < demand and profit > 0.0:
        wage = wage * (1.0 + gamma * (1.0 - Gamma * phi) * epsilon * xi)
        if prod > 0.0:
            # cap at the wage for which last step's profit would be exactly zero
            cap = (price * min(demand, prod) + rho_d * max(cash, 0.0)
                   + rho_l * min(cash, 0.0)) / prod
            wage = min(wage, cap)
    elif prod > demand and profit < 0.0:
        wage = wage * (1.0 - gamma * (1.0 + Gamma * phi) * u * xi)
    wage = wage * (1.0 + g_index * pi_hat)
    return max(wage, 0.0)


@_njit
def update_production(prod, demand, eta_plus, eta_minus, u_star_i):
    if prod < demand:
        return prod + min(eta_plus * (demand - prod), u_star_i)
    if prod > demand:
        return max(0.0, prod - eta_minus * (prod - demand))
    return prod


@_njit
def update_price(price, prod, demand, p_bar, gamma, pi_hat, xi):
    if prod < demand and price < p_bar:
        price = price * (1.0 + gamma * xi)
    elif prod > demand and price > p_bar:
        price = price * (1.0 - gamma * xi)
    price = price * (1.0 + pi_hat)
    return max(price, PRICE_FLOOR)


@_njit
def bank_set_rates(rho0, defaults_D, E_minus, E_plus, S, f_share):
    """Loan and deposit rates making the bank's profit exactly zero.

    Caller guarantees ``S + E_plus > 0``.
    """
    if E_minus > 0.0:
        rho_l = rho0 + (1.0 - f_share) * defaults_D / E_minus
    else:
        rho_l = rho0
    rho_d = (rho_l * E_minus - defaults_D) / (S + E_plus)
    return rho_l, rho_d


@_njit
def household_budget(S, rho_d, total_wages, pi_hat, rho_d_ema, c0, alpha_c):
    S_interim = (1.0 + rho_d) * S + total_wages
    c = clip01(c0 * (1.0 + alpha_c * (pi_hat - rho_d_ema)))
    return S_interim, c * S_interim


# --------------------------------------------------------------------------
# firm-array kernels
# --------------------------------------------------------------------------


@_njit
def compute_aggregates(price, prod, wage, active, n_firms):
    """Production-weighted mean price and wage, unemployment and employment.

    Sums run over active firms.  ``p_bar``/``w_bar`` are NaN when total
    production is zero (the caller halts with FullCollapse).
    """
    sy = 0.0
    spy = 0.0
    swy = 0.0
    for i in range(price.size):
        if active[i]:
            y = prod[i]
            sy += y
            spy += price[i] * y
            swy += wage[i] * y
    u = clip01(1.0 - sy / n_firms)
    if sy > 0.0:
        return spy / sy, swy / sy, u, 1.0 - u
    return np.nan, np.nan, u, 1.0 - u


@_njit
def max_hireable(wage, active, beta, w_bar, n_unemployed, out):
    """Split the unemployed pool over active firms by a wage softmax."""
    # all-zero wages: every active firm is equally attractive
    b = beta if w_bar > 0.0 else 0.0
    w_ref = w_bar if w_bar > 0.0 else 1.0
    shift = -np.inf
    for i in range(wage.size):
        if active[i]:
            shift = max(shift, b * (wage[i] / w_ref))
    z = 0.0
    for i in range(wage.size):
        if active[i]:
            w = math.exp(b * (wage[i] / w_ref) - shift)
            out[i] = w
            z += w
        else:
            out[i] = 0.0
    if z > 0.0:
        scale = n_unemployed / z
        for i in range(wage.size):
            out[i] *= scale
    return out


@_njit
def allocate_demand(c_budget, price, active, beta, p_bar, out):
    """Logit split of the consumption budget; inactive firms get no demand."""
    shift = -np.inf
    for i in range(price.size):
        if active[i]:
            shift = max(shift, -beta * (price[i] / p_bar))
    z = 0.0
    for i in range(price.size):
        if active[i]:
            w = math.exp(-beta * (price[i] / p_bar) - shift)
            out[i] = w
            z += w
        else:
            out[i] = 0.0
    if z > 0.0:
        for i in range(price.size):
            if active[i]:
                out[i] = c_budget * out[i] / (price[i] * z)
    return out


@_njit
def update_firms(price, prod, wage, cash, demand, profit, active, u_star,
                 sc, prm, rng):
    """Default checks and wage/production/price rules for every firm.

    Accumulates ``defaults_D``, ``E_plus``, ``E_minus`` and ``n_defaults``
    into ``sc``.
    """
    s = sc[0]
    q = prm[0]
    D_sum = 0.0
    e_plus = 0.0
    e_minus = 0.0
    n_def = 0
    for i in range(price.size):
        if not active[i]:
            continue
        E = cash[i]
        W = wage[i]
        Y = prod[i]
        D = demand[i]
        if not firm_default_check(E, W * Y, q.theta):
            active[i] = False
            D_sum -= E
            n_def += 1
            continue
        if E > 0.0:
            e_plus += E
        else:
            e_minus -= E
        xi_w = rng.random() if wage_shock_needed(Y, D, profit[i]) else 0.0
        xi_p = rng.random() if price_shock_needed(price[i], Y, D, s.p_bar) else 0.0
        phi = fragility(E, W * Y)
        eta_plus, eta_minus = hiring_firing_rates(phi, s.Gamma, q.eta0_plus, q.eta0_minus)
        wage[i] = update_wage(W, price[i], Y, D, E, profit[i], s.u, s.epsilon, s.Gamma,
                              phi, s.pi_hat, s.rho_d, s.rho_l, q.gamma, q.g_index, xi_w)
        prod[i] = update_production(Y, D, eta_plus, eta_minus, u_star[i])
        price[i] = update_price(price[i], Y, D, s.p_bar, q.gamma, s.pi_hat, xi_p)
    s.defaults_D = D_sum
    s.E_plus = e_plus
    s.E_minus = e_minus
    s.n_defaults = n_def


@_njit
def settle_accounts(price, prod, wage, cash, demand, profit, active, sc, prm):
    """Sales, profits, interest and dividends; rebuilds ``E_plus`` in ``sc``."""
    s = sc[0]
    delta = prm[0].delta
    S = s.S
    consumed = 0.0
    e_plus = 0.0
    for i in range(price.size):
        if not active[i]:
            continue
        sales = price[i] * min(prod[i], demand[i])
        S -= sales
        consumed += sales
        E = cash[i]
        P = sales - wage[i] * prod[i] + s.rho_d * max(E, 0.0) + s.rho_l * min(E, 0.0)
        E += P
        if P > 0.0 and E > 0.0:
            S += delta * E
            E -= delta * E
        cash[i] = E
        profit[i] = P
        e_plus += max(E, 0.0)
    s.S = S
    s.C = consumed
    s.E_plus = e_plus


@_njit
def revive_firms(price, prod, wage, cash, active, sc, prm, rng):
    """Revive inactive firms with probability phi, funded by positive-cash firms.

    New firms start at the mean price and wage with ``E = W * Y``.  The total
    start-up cash is levied pro-rata on every active firm with positive cash,
    the newcomers included.
    """
    s = sc[0]
    phi = prm[0].phi_revival
    funding = 0.0
    e_plus = s.E_plus
    n_rev = 0
    for i in range(price.size):
        if active[i] or not rng.random() < phi:
            continue
        prod[i] = s.u * rng.random()
        price[i] = s.p_bar
        wage[i] = s.w_bar
        cash[i] = wage[i] * prod[i]
        active[i] = True
        funding += cash[i]
        e_plus += max(cash[i], 0.0)
        n_rev += 1
    if funding > 0.0 and e_plus > 0.0:
        for i in range(price.size):
            if active[i] and cash[i] > 0.0:
                cash[i] -= funding * cash[i] / e_plus
    s.E_plus = e_plus
    s.n_revived = n_rev


@_njit
def _money_total(cash, active, S):
    total = 0.0
    for i in range(cash.size):
        if active[i]:
            total += cash[i]
    return total + S


@_njit
def _count_active(active):
    n = 0
    for i in range(active.size):
        if active[i]:
            n += 1
    return n


@_njit
def step_kernel(price, prod, wage, cash, demand, profit, active, u_star, sc, prm, rng):
    """Advance one step in place; returns a halt code (``OK`` on success)."""
    s = sc[0]
    q = prm[0]
    n = q.n_firms
    p_prev = s.p_bar

    # macro aggregates and hiring pool
    p_bar, w_bar, u, eps = compute_aggregates(price, prod, wage, active, n)
    if not p_bar > 0.0:
        return FULL_COLLAPSE
    s.u = u
    s.epsilon = eps
    s.p_bar = p_bar
    max_hireable(wage, active, q.beta, w_bar, n * u, u_star)

    # smoothed observables, with last step's inflation and bank rates
    s.pi_ema = update_ema(s.pi_ema, s.pi, q.omega)
    s.rho_d_ema = update_ema(s.rho_d_ema, s.rho_d, q.omega)
    s.rho_l_ema = update_ema(s.rho_l_ema, s.rho_l, q.omega)
    s.u_ema = update_ema(s.u_ema, u, q.omega)

    # central bank
    s.pi_hat = form_expected_inflation(s.pi_ema, q.tau_R, q.tau_T, q.pi_star)
    if s.pi_hat <= -1.0:
        return HYPER_DEFLATION
    s.rho0 = taylor_rate(s.pi_ema, q.rho_star, q.phi_pi, q.pi_star, q.zlb_enabled != 0.0)
    s.Gamma = fragility_sensitivity(s.rho_l_ema, s.pi_hat, q.alpha_gamma, q.gamma0)

    update_firms(price, prod, wage, cash, demand, profit, active, u_star, sc, prm, rng)

    p_new, w_new, u, eps = compute_aggregates(price, prod, wage, active, n)
    if not p_new > 0.0:
        return FULL_COLLAPSE
    if not math.isfinite(p_new) or p_new > q.collapse_guard:
        return HYPER_INFLATION
    if p_new < 1.0 / q.collapse_guard:
        return HYPER_DEFLATION
    s.pi = (p_new - p_prev) / p_prev
    s.p_bar = p_new
    s.u = u
    s.epsilon = eps

    # bank
    if not s.S + s.E_plus > 0.0:
        return COLLAPSE_DETECTED
    rho_l, rho_d = bank_set_rates(s.rho0, s.defaults_D, s.E_minus, s.E_plus, s.S,
                                  q.f_share)
    s.rho_l = rho_l
    s.rho_d = rho_d

    # households
    wages_paid = 0.0
    for i in range(price.size):
        if active[i]:
            wages_paid += wage[i] * prod[i]
    S_interim, c_budget = household_budget(s.S, s.rho_d, wages_paid, s.pi_hat,
                                           s.rho_d_ema, q.c0, q.alpha_c)
    s.S = S_interim
    s.C_B = c_budget
    allocate_demand(s.C_B, price, active, q.beta, s.p_bar, demand)

    settle_accounts(price, prod, wage, cash, demand, profit, active, sc, prm)

    # revivals use the start-of-step mean wage
    s.w_bar = w_bar
    revive_firms(price, prod, wage, cash, active, sc, prm, rng)
    s.w_bar = w_new

    s.n_active = _count_active(active)
    s.money_total = _money_total(cash, active, s.S)
    if not math.isfinite(s.money_total):
        # runaway bank rates overflowed the balance sheets
        return COLLAPSE_DETECTED
    s.t += 1
    return OK


@_njit
def _write_record(rec, k, sc):
    s = sc[0]
    r = rec[k]
    r.t = s.t
    r.p_bar = s.p_bar
    r.w_bar = s.w_bar
    r.u = s.u
    r.pi = s.pi
    r.pi_ema = s.pi_ema
    r.pi_hat = s.pi_hat
    r.rho0 = s.rho0
    r.rho_l = s.rho_l
    r.rho_d = s.rho_d
    r.rho_d_ema = s.rho_d_ema
    r.rho_l_ema = s.rho_l_ema
    r.u_ema = s.u_ema
    r.Gamma = s.Gamma
    r.S = s.S
    r.C_B = s.C_B
    r.C = s.C
    r.n_defaults = s.n_defaults
    r.n_active = s.n_active
    r.money_total = s.money_total


@_njit
def run_kernel(price, prod, wage, cash, demand, profit, active, u_star, sc, prm, rng,
               n_steps, rec):
    """Run up to ``n_steps`` steps; returns (records written, halt code)."""
    for k in range(n_steps):
        code = step_kernel(price, prod, wage, cash, demand, profit, active, u_star,
                           sc, prm, rng)
        if code != OK:
            return k, code
        _write_record(rec, k, sc)
    return n_steps, OK


# --------------------------------------------------------------------------
# Python-facing state
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FirmState:
    active: bool
    price: float
    production: float
    wage: float
    cash: float
    demand: float
    profit: float


@dataclass(frozen=True)
class HouseholdSector:
    S: float
    C_B: float
    C: float


@dataclass(frozen=True)
class BankCBState:
    rho0: float
    rho_l: float
    rho_d: float
    defaults_D: float
    E_plus: float
    E_minus: float


@dataclass(frozen=True)
class MacroState:
    p_bar: float
    w_bar: float
    u: float
    epsilon: float
    pi: float
    pi_ema: float
    rho_d_ema: float
    rho_l_ema: float
    u_ema: float
    pi_hat: float
    Gamma: float


class EconomyState:
    """Full mutable world of one run.

    Firm data lives in parallel arrays (``price``, ``prod``, ``wage``,
    ``cash``, ``demand``, ``profit``, ``active``); every scalar lives in the
    one-row structured array ``scalars``.  ``households``, ``bank`` and
    ``macro`` return frozen snapshots.
    """

    def __init__(self, params: ModelParams, rng: np.random.Generator, price, prod, wage,
                 cash, demand, profit, active, scalars):
        self.params = params
        self.rng = rng
        self.price = price
        self.prod = prod
        self.wage = wage
        self.cash = cash
        self.demand = demand
        self.profit = profit
        self.active = active
        self.scalars = scalars
        self.u_star = np.zeros_like(price)
        self.prm = params_record(params)
        self.halt: Halt | None = None

    @property
    def t(self) -> int:
        return int(self.scalars[0]["t"])

    @property
    def n_firms(self) -> int:
        return self.price.size

    def firm(self, i: int) -> FirmState:
        return FirmState(bool(self.active[i]), float(self.price[i]), float(self.prod[i]),
                         float(self.wage[i]), float(self.cash[i]), float(self.demand[i]),
                         float(self.profit[i]))

    def _snapshot(self, cls):
        row = self.scalars[0]
        return cls(**{f: float(row[f]) for f in cls.__dataclass_fields__})

    @property
    def households(self) -> HouseholdSector:
        return self._snapshot(HouseholdSector)

    @property
    def bank(self) -> BankCBState:
        return self._snapshot(BankCBState)

    @property
    def macro(self) -> MacroState:
        return self._snapshot(MacroState)

    def money_total(self) -> float:
        return float(_money_total(self.cash, self.active, self.scalars[0]["S"]))

    def copy(self) -> "EconomyState":
        rng = np.random.Generator(type(self.rng.bit_generator)())
        rng.bit_generator.state = self.rng.bit_generator.state
        other = EconomyState(self.params, rng, self.price.copy(), self.prod.copy(),
                             self.wage.copy(), self.cash.copy(), self.demand.copy(),
                             self.profit.copy(), self.active.copy(), self.scalars.copy())
        other.halt = self.halt
        return other

    def _args(self):
        return (self.price, self.prod, self.wage, self.cash, self.demand, self.profit,
                self.active, self.u_star, self.scalars, self.prm, self.rng)


def init_economy(params: ModelParams) -> EconomyState:
    rng = np.random.default_rng(params.seed)
    n = params.n_firms
    y0 = 0.1 + 0.9 * rng.random()
    r = rng.random((n, 3))
    price = 1.0 + 0.1 * (2.0 * r[:, 0] - 1.0)
    prod = y0 + 0.1 * (2.0 * r[:, 1] - 1.0)
    wage = np.ones(n)
    cash = 2.0 * wage * prod * r[:, 2]
    demand = np.full(n, y0)
    profit = price * np.minimum(demand, prod) - wage * prod
    active = np.ones(n, dtype=np.bool_)

    sc = np.zeros(1, dtype=SCALARS_DTYPE)
    sc["S"] = n - _money_total(cash, active, 0.0)
    p_bar, w_bar, u, eps = compute_aggregates(price, prod, wage, active, float(n))
    sc["p_bar"] = p_bar
    sc["w_bar"] = w_bar
    sc["u"] = u
    sc["epsilon"] = eps
    sc["u_ema"] = u
    for key in ("rho0", "rho_l", "rho_d", "rho_l_ema", "rho_d_ema"):
        sc[key] = params.rho_star
    sc["n_active"] = n
    state = EconomyState(params, rng, price, prod, wage, cash, demand, profit, active, sc)
    sc["money_total"] = state.money_total()
    return state


def step(state: EconomyState) -> np.void:
    """Advance ``state`` by one step and return its record.

    Raises a :class:`Halt` subclass if the economy can no longer be simulated;
    the state is then marked halted and must not be stepped again.
    """
    if state.halt is not None:
        raise RuntimeError(f"state already halted: {state.halt}")
    code = step_kernel(*state._args())
    if code != OK:
        state.halt = _HALT_CLASSES[code](HALT_REASONS[code], state.t + 1)
        raise state.halt
    rec = np.zeros(1, dtype=RECORD_DTYPE)
    _write_record(rec, 0, state.scalars)
    return rec[0]


@dataclass
class TimeSeries:
    """Per-step records of a run plus halt metadata.

    ``records`` is a structured array with the fields of ``RECORD_DTYPE``;
    ``ts["u"]`` returns a column.
    """

    params: ModelParams
    records: np.ndarray
    halt_reason: str | None = None
    halt_step: int | None = None

    def __getitem__(self, key: str) -> np.ndarray:
        return self.records[key]

    def __len__(self) -> int:
        return self.records.size

    @property
    def halted(self) -> bool:
        return self.halt_reason is not None


def run_state(state: EconomyState, n_steps: int) -> TimeSeries:
    rec = np.zeros(n_steps, dtype=RECORD_DTYPE)
    written, code = run_kernel(*state._args(), n_steps, rec)
    ts = TimeSeries(state.params, rec[:written])
    if code != OK:
        state.halt = _HALT_CLASSES[code](HALT_REASONS[code], state.t + 1)
        ts.halt_reason = HALT_REASONS[code]
        ts.halt_step = state.t + 1
    return ts


def run(params: ModelParams) -> TimeSeries:
    """Simulate ``params.T`` steps (fewer if the run halts)."""
    return run_state(init_economy(params), params.T)
