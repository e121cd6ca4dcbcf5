"""Deterministic synthetic click-stream generator.

Each campaign draws a per-click latent intensity theta ~ Gamma(shape, rate),
event counts ~ Poisson(theta * drift(t)), and event delays i.i.d. from a
per-campaign mixture of exponential / Weibull / lognormal components
truncated to the attribution window. The Gamma mixing makes head and tail
counts positively correlated, so the observed "label so far" genuinely
carries information about the unobserved tail, and it admits a closed-form
posterior tail mean used as an analytic stand-in for an ideal sub-model.

Stream files are newline-delimited JSON (schema "v1"), with a parallel
ground-truth sidecar keyed by example_id.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict

import numpy as np

from .core import DAY, ClickExample, ContractViolation, ConversionEvent, \
    observed_prefix

SCHEMA_VERSION = "v1"

SEGMENT_TOKENS = tuple(f"s{i}" for i in range(6))
CONTEXT_TOKENS = tuple(f"c{i}" for i in range(8))

_EXP, _WEIBULL, _LOGNORMAL = 0, 1, 2


@dataclass(frozen=True)
class DelayMixture:
    """Mixture of Exponential(mean) + Weibull(shape, scale) +
    LogNormal(mu, sigma) delay distributions."""

    exp_mean: float
    weibull_shape: float
    weibull_scale: float
    lognorm_mu: float
    lognorm_sigma: float
    weights: tuple

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(self.weights))
        if len(self.weights) != 3 or any(w < 0 for w in self.weights):
            raise ValueError(f"need 3 non-negative weights, got {self.weights}")
        if abs(sum(self.weights) - 1.0) > 1e-9:
            raise ValueError(f"mixture weights must sum to 1: {self.weights}")
        if min(self.exp_mean, self.weibull_shape, self.weibull_scale,
               self.lognorm_sigma) <= 0:
            raise ValueError("mixture component parameters must be positive")

    def cdf(self, t):
        """Exact mixture CDF (untruncated)."""
        t = np.asarray(t, dtype=float)
        safe = np.maximum(t, 1e-300)
        e = 1.0 - np.exp(-safe / self.exp_mean)
        w = 1.0 - np.exp(-((safe / self.weibull_scale) ** self.weibull_shape))
        z = (np.log(safe) - self.lognorm_mu) / (self.lognorm_sigma * math.sqrt(2))
        ln = 0.5 * (1.0 + _erf(z))
        out = self.weights[0] * e + self.weights[1] * w + self.weights[2] * ln
        out = np.where(t <= 0, 0.0, out)
        return float(out) if out.ndim == 0 else out

    def sample(self, rng: np.random.Generator, n: int, max_delay: float):
        """n i.i.d. draws truncated to [0, max_delay) by rejection."""
        out = np.empty(n)
        pending = np.arange(n)
        while pending.size:
            comp = rng.choice(3, size=pending.size, p=self.weights)
            draws = np.empty(pending.size)
            for kind, mask_draws in (
                (_EXP, lambda k: rng.exponential(self.exp_mean, k)),
                (_WEIBULL, lambda k: self.weibull_scale * rng.weibull(self.weibull_shape, k)),
                (_LOGNORMAL, lambda k: rng.lognormal(self.lognorm_mu, self.lognorm_sigma, k)),
            ):
                sel = comp == kind
                if sel.any():
                    draws[sel] = mask_draws(int(sel.sum()))
            out[pending] = draws
            pending = pending[draws >= max_delay]
        return out

    def median(self) -> float:
        """Median by bisection on the mixture CDF."""
        lo, hi = 1e-6, 1.0
        while self.cdf(hi) < 0.5:
            hi *= 2
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if self.cdf(mid) < 0.5:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)


def _erf(z):
    return np.vectorize(math.erf)(z) if np.ndim(z) else math.erf(z)


@dataclass(frozen=True)
class CampaignProfile:
    campaign_id: int
    start_time: float
    gamma_shape: float  # alpha of the per-click intensity prior
    gamma_rate: float   # beta (rate) of the prior; mean intensity = alpha/beta
    delay: DelayMixture
    attribution_window: float
    drift_per_day: float = 1.0
    segment_weights: tuple = ()
    retraction_prob: float = 0.0
    value_lognorm: tuple = None  # (mu, sigma) or None for unit values

    def __post_init__(self):
        if self.gamma_shape <= 0 or self.gamma_rate <= 0:
            raise ValueError(
                f"campaign {self.campaign_id}: gamma prior parameters must be positive"
            )
        if not 0.0 <= self.retraction_prob <= 1.0:
            raise ValueError(
                f"campaign {self.campaign_id}: retraction_prob outside [0, 1]"
            )
        object.__setattr__(self, "segment_weights", tuple(self.segment_weights))

    def drift_multiplier(self, t: float) -> float:
        return self.drift_per_day ** ((t - self.start_time) / DAY)

    def truncated_cdf(self, t: float) -> float:
        """CDF of the actual delay distribution (mixture truncated to the
        attribution window)."""
        if t <= 0:
            return 0.0
        if t >= self.attribution_window:
            return 1.0
        return self.delay.cdf(t) / self.delay.cdf(self.attribution_window)

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CampaignProfile":
        d = dict(d)
        mix = d.pop("delay")
        return cls(delay=DelayMixture(**mix), **{
            k: tuple(v) if k in ("segment_weights", "value_lognorm") and v is not None else v
            for k, v in d.items()
        })


@dataclass(frozen=True)
class StreamConfig:
    total_clicks: int = 200_000
    campaign_count: int = 50
    cold_start_fraction: float = 0.5
    duration: float = 90 * DAY
    rng_seed: int = 0
    attribution_window: float = 30 * DAY
    retraction_prob: float = 0.0
    value_labels: bool = False
    drift_magnitude: float = 0.01  # per-day rate drift sampled in 1 +/- this
    min_median_delay: float = 2 * 3600.0
    max_median_delay: float = 25 * DAY
    gamma_shape_range: tuple = (0.8, 2.0)
    mean_rate_range: tuple = (0.05, 3.0)

    def __post_init__(self):
        if self.total_clicks < 1:
            raise ValueError("total_clicks must be >= 1")
        if self.campaign_count < 1:
            raise ValueError("campaign_count must be >= 1")
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if not 0 <= self.cold_start_fraction < 1:
            raise ValueError("cold_start_fraction must be in [0, 1)")


@dataclass
class GroundTruth:
    """Generator-side truth used by slicing and the analytic oracle."""

    thetas: dict            # example_id -> latent intensity
    campaigns: dict         # campaign_id -> CampaignProfile
    high_delay: set         # campaign ids tagged HIGH_DELAY


@dataclass
class Stream:
    examples: list
    config: StreamConfig
    ground_truth: GroundTruth


def make_population(config: StreamConfig, rng: np.random.Generator) -> list:
    """Campaign profiles with heterogeneous delay medians spanning at least
    two orders of magnitude (the first two campaigns anchor the extremes)."""
    campaigns = []
    n = config.campaign_count
    n_day_zero = max(1, round(n * (1 - config.cold_start_fraction)))
    for i in range(n):
        if i == 0 and n > 1:
            median = config.min_median_delay
        elif i == 1 and n > 2:
            median = config.max_median_delay
        else:
            median = math.exp(rng.uniform(
                math.log(config.min_median_delay),
                math.log(config.max_median_delay),
            ))
        weights = rng.dirichlet(np.ones(3))
        k = rng.uniform(0.8, 1.8)
        sigma = rng.uniform(0.5, 1.25)
        # every component shares the target median, so the mixture median
        # is exactly `median` regardless of the weights
        mixture = DelayMixture(
            exp_mean=median / math.log(2),
            weibull_shape=k,
            weibull_scale=median / (math.log(2) ** (1.0 / k)),
            lognorm_mu=math.log(median),
            lognorm_sigma=sigma,
            weights=tuple(weights),
        )
        alpha = rng.uniform(*config.gamma_shape_range)
        mean_rate = math.exp(rng.uniform(
            math.log(config.mean_rate_range[0]),
            math.log(config.mean_rate_range[1]),
        ))
        start = 0.0 if i < n_day_zero else rng.uniform(
            0.1 * config.duration, 0.6 * config.duration
        )
        campaigns.append(CampaignProfile(
            campaign_id=i,
            start_time=start,
            gamma_shape=alpha,
            gamma_rate=alpha / mean_rate,
            delay=mixture,
            attribution_window=config.attribution_window,
            drift_per_day=rng.uniform(
                1 - config.drift_magnitude, 1 + config.drift_magnitude
            ),
            segment_weights=tuple(rng.dirichlet(np.ones(len(SEGMENT_TOKENS)) * 2)),
            retraction_prob=config.retraction_prob,
            value_lognorm=(0.0, 0.5) if config.value_labels else None,
        ))
    return campaigns


def campaign_delay_quantiles(campaigns) -> set:
    """Campaign ids whose delay median falls in the top 10% of medians
    across the population (the HIGH_DELAY tag)."""
    medians = [(c.delay.median(), c.campaign_id) for c in campaigns]
    k = max(1, math.ceil(0.1 * len(medians)))
    medians.sort(reverse=True)
    return {cid for _, cid in medians[:k]}


def true_delay_cdf(campaign: CampaignProfile, t: float) -> float:
    """Exact (untruncated) mixture CDF of the campaign's delay distribution."""
    return float(campaign.delay.cdf(t))


def generate(config: StreamConfig) -> Stream:
    """Deterministic stream of clicks sorted by click_time, with the
    ground-truth sidecar (per-click theta, campaign profiles, delay tags)."""
    rng = np.random.default_rng(config.rng_seed)
    campaigns = make_population(config, rng)
    context_weights = rng.dirichlet(np.ones(len(CONTEXT_TOKENS)) * 3)
    share = rng.dirichlet(np.ones(config.campaign_count) * 2)
    clicks_per_campaign = rng.multinomial(config.total_clicks, share)

    records = []  # (click_time, campaign_id, theta, events)
    m = config.attribution_window
    for camp, n_clicks in zip(campaigns, clicks_per_campaign):
        if n_clicks == 0:
            continue
        times = rng.uniform(camp.start_time, config.duration, n_clicks)
        thetas = rng.gamma(camp.gamma_shape, 1.0 / camp.gamma_rate, n_clicks)
        drift = camp.drift_per_day ** ((times - camp.start_time) / DAY)
        counts = rng.poisson(thetas * drift)
        total_events = int(counts.sum())
        delays = camp.delay.sample(rng, total_events, m)
        if camp.value_lognorm is not None:
            values = rng.lognormal(*camp.value_lognorm, total_events)
        else:
            values = np.ones(total_events)
        if camp.retraction_prob > 0:
            retracted = rng.random(total_events) < camp.retraction_prob
            retract_delays = delays + rng.exponential(2 * DAY, total_events)
        else:
            retracted = np.zeros(total_events, dtype=bool)
            retract_delays = None
        segments = rng.choice(
            len(SEGMENT_TOKENS), size=n_clicks, p=np.asarray(camp.segment_weights)
        )
        contexts = rng.choice(len(CONTEXT_TOKENS), size=n_clicks, p=context_weights)

        pos = 0
        for j in range(n_clicks):
            c = int(counts[j])
            events = []
            for e in range(pos, pos + c):
                events.append(ConversionEvent(float(delays[e]), float(values[e]), 1))
                if retracted[e] and retract_delays[e] < m:
                    events.append(ConversionEvent(
                        float(retract_delays[e]), float(values[e]), -1
                    ))
            pos += c
            events.sort(key=lambda ev: ev.delay)
            features = [
                ("campaign", str(camp.campaign_id)),
                ("segment", SEGMENT_TOKENS[segments[j]]),
                ("context", CONTEXT_TOKENS[contexts[j]]),
            ]
            records.append((
                float(times[j]), camp.campaign_id, float(thetas[j]),
                features, events,
            ))

    records.sort(key=lambda r: r[0])
    examples = []
    thetas = {}
    camp_by_id = {c.campaign_id: c for c in campaigns}
    for example_id, (t, cid, theta, features, events) in enumerate(records):
        examples.append(ClickExample(
            example_id=example_id,
            click_time=t,
            campaign_id=cid,
            campaign_start_time=camp_by_id[cid].start_time,
            serving_features=features,
            attribution_window=m,
            events=events,
        ))
        thetas[example_id] = theta

    truth = GroundTruth(
        thetas=thetas,
        campaigns=camp_by_id,
        high_delay=campaign_delay_quantiles(campaigns),
    )
    return Stream(examples=examples, config=config, ground_truth=truth)


def posterior_expected_tail(
    example: ClickExample, campaign: CampaignProfile, horizon: float
) -> float:
    """Closed-form posterior mean of the tail count in [horizon, M) given
    the observed head count: q * (alpha + k) / (beta + p) under the
    Gamma-Poisson conjugacy with independent thinning at probability
    p = P(delay < horizon). Valid only for no-drift, no-retraction
    campaigns."""
    if not 0 <= horizon < campaign.attribution_window:
        raise ContractViolation(
            f"horizon {horizon} outside [0, {campaign.attribution_window})"
        )
    if campaign.drift_per_day != 1.0 or campaign.retraction_prob > 0:
        raise ContractViolation(
            "analytic posterior requires a no-drift, no-retraction campaign"
        )
    p = campaign.truncated_cdf(horizon)
    k = observed_prefix(example, horizon)
    return (1.0 - p) * (campaign.gamma_shape + k) / (campaign.gamma_rate + p)


# -- file formats -----------------------------------------------------------

def write_stream(path, stream: Stream):
    with open(path, "w") as fh:
        fh.write(json.dumps({"schema_version": SCHEMA_VERSION}) + "\n")
        for e in stream.examples:
            fh.write(json.dumps({
                "example_id": e.example_id,
                "click_time": e.click_time,
                "campaign_id": e.campaign_id,
                "campaign_start_time": e.campaign_start_time,
                "features": {f: t for f, t in e.serving_features},
                "attribution_window": e.attribution_window,
                "events": [
                    {"delay": ev.delay, "value": ev.value, "sign": ev.sign}
                    for ev in e.events
                ],
            }) + "\n")


def read_stream(path) -> list:
    examples = []
    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(
                f"unsupported stream schema {header.get('schema_version')!r}"
            )
        for line in fh:
            d = json.loads(line)
            examples.append(ClickExample(
                example_id=d["example_id"],
                click_time=d["click_time"],
                campaign_id=d["campaign_id"],
                campaign_start_time=d["campaign_start_time"],
                serving_features=list(d["features"].items()),
                attribution_window=d["attribution_window"],
                events=[
                    ConversionEvent(ev["delay"], ev["value"], ev["sign"])
                    for ev in d["events"]
                ],
            ))
    return examples


def write_sidecar(path, stream: Stream):
    truth = stream.ground_truth
    with open(path, "w") as fh:
        fh.write(json.dumps({
            "schema_version": SCHEMA_VERSION,
            "campaigns": [c.to_dict() for c in truth.campaigns.values()],
            "high_delay": sorted(truth.high_delay),
        }) + "\n")
        for example_id in sorted(truth.thetas):
            fh.write(json.dumps({
                "example_id": example_id,
                "theta": truth.thetas[example_id],
            }) + "\n")


def read_sidecar(path) -> GroundTruth:
    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(
                f"unsupported sidecar schema {header.get('schema_version')!r}"
            )
        campaigns = {
            c["campaign_id"]: CampaignProfile.from_dict(c)
            for c in header["campaigns"]
        }
        thetas = {}
        for line in fh:
            d = json.loads(line)
            thetas[d["example_id"]] = d["theta"]
    return GroundTruth(
        thetas=thetas,
        campaigns=campaigns,
        high_delay=set(header["high_delay"]),
    )
