//! Synthetic transaction stream with mixing-style anomaly bursts.
//!
//! Normal traffic arrives uniformly over the date range with a diurnal hour
//! profile, log-normal amounts and a large pool of counterparties. A
//! configurable share of normal rows are isolated look-alikes: round
//! payments of the mixing denomination made at off-peak hours, which no
//! single-row classifier can tell apart from an anomaly.
//!
//! Anomalies arrive in bursts whose lengths are geometric with mean
//! `burst_length`. Members of a burst are seconds to minutes apart, carry the
//! denomination with ±1% jitter, share one counterparty address and start at
//! an off-peak hour. Bursts are therefore contiguous in the chronological
//! order (a temporal signal) and near-identical in feature space (a
//! correlation-graph cluster).

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::Rng;
use rand_distr::{Distribution, Exp, Geometric, LogNormal, StandardNormal};

use super::TransactionRecord;
use crate::numcore::Prng;
use crate::{Error, Result};

/// Relative hour-of-day weights of normal traffic (UTC).
const DIURNAL: [f64; 24] = [
    0.6, 0.5, 0.4, 0.4, 0.5, 0.7, 1.0, 1.4, 1.9, 2.3, 2.6, 2.8, 3.0, 3.1, 3.2, 3.2, 3.1, 3.0, 2.8, 2.5,
    2.1, 1.7, 1.2, 0.8,
];

/// Hours at which bursts and look-alikes start.
const OFF_PEAK: [u32; 6] = [0, 1, 2, 3, 4, 5];

const BECH32: &[u8] = b"qpzry9x8gf2tvdw0s3jn54khce6mua7l";
const CATEGORIES: [&str; 5] = ["exchange", "merchant", "gambling", "p2p marketplace", "wallet service"];
const CLUSTERS: [&str; 8] = [
    "Binance", "Coinbase", "Kraken", "Bitfinex", "OKX", "BitPay", "Paxful", "Stake",
];

/// Generator parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_normal: usize,
    pub n_anomalous: usize,
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    /// Mean anomalous burst length (geometric, at least 1).
    pub burst_length: f64,
    /// Coin amount of mixing-style transactions.
    pub denomination: f64,
    pub value_lognormal_mu: f64,
    pub value_lognormal_sigma: f64,
    /// Coin to USD price on the first day.
    pub usd_rate: f64,
    /// Daily standard deviation of the log price random walk; zero keeps
    /// the price fixed at `usd_rate`.
    pub usd_volatility: f64,
    /// Share of normal rows that copy the anomaly's single-row signature.
    pub lookalike_fraction: f64,
    /// Share of non-look-alike normal rows that are outbound (negative value).
    pub outbound_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    /// 20,000 normal and 4,400 anomalous rows (an 82/18 split) over
    /// 2020-01-01 to 2024-04-24, seed 7.
    fn default() -> Self {
        Self {
            n_normal: 20_000,
            n_anomalous: 4_400,
            start: Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap(),
            end: Utc.with_ymd_and_hms(2024, 4, 24, 0, 0, 0).unwrap(),
            burst_length: 8.0,
            denomination: 0.1,
            value_lognormal_mu: 0.0,
            value_lognormal_sigma: 0.6,
            usd_rate: 30_000.0,
            usd_volatility: 0.03,
            lookalike_fraction: 0.15,
            outbound_fraction: 0.0,
            seed: 7,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.end <= self.start {
            return Err(Error::param("synth: end date must be after start date"));
        }
        if (self.end - self.start).num_days() < 1 {
            return Err(Error::param("synth: date range must span at least one day"));
        }
        if !(self.burst_length >= 1.0) {
            return Err(Error::param("synth: burst_length must be >= 1"));
        }
        if !(self.value_lognormal_sigma > 0.0) {
            return Err(Error::param("synth: value sigma must be > 0"));
        }
        if !(self.denomination > 0.0) || !self.usd_rate.is_finite() {
            return Err(Error::param("synth: denomination must be > 0 and usd_rate finite"));
        }
        if !(self.usd_volatility >= 0.0) || !self.usd_volatility.is_finite() {
            return Err(Error::param("synth: usd_volatility must be finite and >= 0"));
        }
        for (name, p) in [("lookalike_fraction", self.lookalike_fraction), ("outbound_fraction", self.outbound_fraction)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::param(format!("synth: {name} must be in [0, 1]")));
            }
        }
        Ok(())
    }
}

fn random_address(rng: &mut Prng) -> String {
    let mut s = String::with_capacity(42);
    s.push_str("bc1q");
    for _ in 0..38 {
        s.push(BECH32[rng.below(BECH32.len())] as char);
    }
    s
}

fn random_hash(rng: &mut Prng) -> String {
    (0..4).map(|_| format!("{:016x}", rng.random::<u64>())).collect()
}

fn weighted_hour(rng: &mut Prng) -> u32 {
    let total: f64 = DIURNAL.iter().sum();
    let mut u = rng.uniform() * total;
    for (h, &w) in DIURNAL.iter().enumerate() {
        if u < w {
            return h as u32;
        }
        u -= w;
    }
    23
}

struct Clock {
    start: DateTime<Utc>,
    days: i64,
    end: DateTime<Utc>,
}

impl Clock {
    /// Random instant on a random day at the given hour, clamped to the range.
    fn at_hour(&self, rng: &mut Prng, hour: u32) -> DateTime<Utc> {
        let day = rng.below(self.days as usize) as i64;
        let secs = hour as i64 * 3600 + rng.below(3600) as i64;
        let midnight = self.start.date_naive().and_hms_opt(0, 0, 0).unwrap().and_utc();
        let t = midnight + Duration::days(day) + Duration::seconds(secs);
        t.max(self.start).min(self.end - Duration::seconds(1))
    }
}

/// Generates `n_normal + n_anomalous` records, sorted by timestamp then hash.
pub fn synth_generate(config: &SynthConfig) -> Result<Vec<TransactionRecord>> {
    config.validate()?;
    let root = Prng::new(config.seed);
    let clock = Clock {
        start: config.start,
        days: (config.end - config.start).num_days().max(1),
        end: config.end,
    };
    let mut meta_rng = root.child(0);
    let subject: Vec<String> = (0..50).map(|_| random_address(&mut meta_rng)).collect();
    let counterparties: Vec<(String, Option<String>, String)> = (0..5000)
        .map(|_| {
            let addr = random_address(&mut meta_rng);
            let cluster = if meta_rng.bernoulli(0.7) {
                Some(CLUSTERS[meta_rng.below(CLUSTERS.len())].to_string())
            } else {
                None
            };
            let cat = CATEGORIES[meta_rng.below(CATEGORIES.len())].to_string();
            (addr, cluster, cat)
        })
        .collect();

    let mut price_rng = root.child(3);
    let mut log_price = config.usd_rate.ln();
    let prices: Vec<f64> = (0..=clock.days)
        .map(|_| {
            let p: f64 = log_price.exp();
            log_price += config.usd_volatility * Distribution::<f64>::sample(&StandardNormal, &mut price_rng);
            p
        })
        .collect();
    let price_at = |ts: DateTime<Utc>| prices[((ts - config.start).num_days().max(0) as usize).min(prices.len() - 1)];

    let lognormal = LogNormal::new(config.value_lognormal_mu, config.value_lognormal_sigma)
        .map_err(|e| Error::param(format!("synth: {e}")))?;
    let jitter = |rng: &mut Prng| config.denomination * (1.0 + rng.uniform_in(-0.01, 0.01));

    let mut records = Vec::with_capacity(config.n_normal + config.n_anomalous);
    let mut rng = root.child(1);
    for _ in 0..config.n_normal {
        let lookalike = rng.bernoulli(config.lookalike_fraction);
        let (ts, value) = if lookalike {
            let hour = OFF_PEAK[rng.below(OFF_PEAK.len())];
            (clock.at_hour(&mut rng, hour), jitter(&mut rng))
        } else {
            let hour = weighted_hour(&mut rng);
            let ts = clock.at_hour(&mut rng, hour);
            let magnitude = lognormal.sample(&mut rng);
            let sign = if rng.bernoulli(config.outbound_fraction) { -1.0 } else { 1.0 };
            (ts, sign * magnitude)
        };
        let (addr, cluster, cat) = &counterparties[rng.below(counterparties.len())];
        records.push(TransactionRecord {
            hash: random_hash(&mut rng),
            timestamp: Some(ts),
            receiving_address: Some(subject[rng.below(subject.len())].clone()),
            counterparty_address: Some(addr.clone()),
            counterparty_cluster_name: cluster.clone(),
            counterparty_shared_name: None,
            counterparty_category: Some(cat.clone()),
            value: Some(value),
            usd_value: Some(value * price_at(ts)),
            label: 0,
        });
    }

    let mut rng = root.child(2);
    let geometric =
        Geometric::new(1.0 / config.burst_length).map_err(|e| Error::param(format!("synth: {e}")))?;
    let gap: Exp<f64> = Exp::new(1.0 / 60.0).map_err(|e| Error::param(format!("synth: {e}")))?;
    let mut remaining = config.n_anomalous;
    let mut burst_id = 0usize;
    while remaining > 0 {
        let len = ((geometric.sample(&mut rng) + 1) as usize).min(remaining);
        let hour = OFF_PEAK[rng.below(OFF_PEAK.len())];
        let mut ts = clock.at_hour(&mut rng, hour);
        let mixer = random_address(&mut rng);
        let receiver = subject[rng.below(subject.len())].clone();
        for _ in 0..len {
            let value = jitter(&mut rng);
            records.push(TransactionRecord {
                hash: random_hash(&mut rng),
                timestamp: Some(ts),
                receiving_address: Some(receiver.clone()),
                counterparty_address: Some(mixer.clone()),
                counterparty_cluster_name: Some(format!("CoinJoin Pool {}", burst_id % 16)),
                counterparty_shared_name: None,
                counterparty_category: Some("mixing service".to_string()),
                value: Some(value),
                usd_value: Some(value * price_at(ts)),
                label: 1,
            });
            let step = (gap.sample(&mut rng).round() as i64).max(1);
            ts = (ts + Duration::seconds(step)).min(config.end - Duration::seconds(1));
        }
        remaining -= len;
        burst_id += 1;
    }

    records.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.hash.cmp(&b.hash)));
    Ok(records)
}
