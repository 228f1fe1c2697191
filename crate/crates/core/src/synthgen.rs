//! A synthetic confounded world: user/video interest drives the watched
//! fraction, duration scales it, and duration also tilts which videos get
//! logged.
//!
//! Structural model for one impression of video `v` to user `u`:
//!
//! ```text
//! s = sigmoid(u . v / sqrt(p))
//! w = d_v * sigmoid(a * s + b + eps),   eps ~ N(0, sigma^2)
//! P(v | slate) ~ exp(alpha * z(log d_v) + beta * s)
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, InteractionRecord, Schema};
use crate::error::{Error, Result};
use crate::model::sigmoid;

const STREAM_LOGGED: u64 = 1;
const STREAM_UNBIASED: u64 = 2;
const STREAM_TOY: u64 = 3;
const QUADRATURE_POINTS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub n_users: usize,
    pub n_videos: usize,
    pub latent_dim: usize,
    /// `[d_min, d_max]` in seconds; durations are log-uniform on it.
    pub duration_range: [f64; 2],
    pub interest_scale: f64,
    pub interest_offset: f64,
    pub noise_sd: f64,
    /// Weight of standardized log-duration in the logging softmax.
    pub exposure_bias: f64,
    /// Weight of interest in the logging softmax.
    pub exposure_interest: f64,
    pub slate_size: usize,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_users: 500,
            n_videos: 4000,
            latent_dim: 2,
            duration_range: [20.0, 300.0],
            interest_scale: 6.0,
            interest_offset: -4.0,
            noise_sd: 0.5,
            exposure_bias: 1.0,
            exposure_interest: 2.0,
            slate_size: 50,
            seed: 7,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.duration_range;
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
            return Err(Error::invalid(format!("invalid duration range [{lo}, {hi}]")));
        }
        if self.n_users == 0 || self.n_videos == 0 || self.latent_dim == 0 || self.slate_size == 0 {
            return Err(Error::invalid(
                "n_users, n_videos, latent_dim and slate_size must be >= 1",
            ));
        }
        if self.n_users > u32::MAX as usize || self.n_videos > u32::MAX as usize {
            return Err(Error::invalid("id spaces must fit in 32 bits"));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(Error::invalid("noise_sd must be finite and >= 0"));
        }
        let knobs = [
            self.interest_scale,
            self.interest_offset,
            self.exposure_bias,
            self.exposure_interest,
        ];
        if knobs.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("generator coefficients must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub config: GenConfig,
    /// `n_users x latent_dim`, row-major.
    pub users: Vec<f64>,
    /// `n_videos x latent_dim`, row-major.
    pub videos: Vec<f64>,
    pub durations: Vec<f64>,
    /// Standardized log-duration per video.
    pub duration_z: Vec<f64>,
    /// Standardized mean noise-free watch fraction per video, over all users.
    pub video_stat: Vec<f64>,
}

impl World {
    pub fn interest(&self, u: usize, v: usize) -> f64 {
        let p = self.config.latent_dim;
        let uu = &self.users[u * p..(u + 1) * p];
        let vv = &self.videos[v * p..(v + 1) * p];
        let dot: f64 = uu.iter().zip(vv).map(|(a, b)| a * b).sum();
        sigmoid(dot / (p as f64).sqrt())
    }

    pub fn schema(&self) -> Schema {
        let mut s = Schema::new(2, vec![self.config.n_users as u32, self.config.n_videos as u32]);
        s.dense_names = vec!["log_duration_z".into(), "video_mean_fraction_z".into()];
        s.id_names = vec!["user".into(), "video".into()];
        s
    }

    fn record(&self, u: usize, v: usize, eps: f64) -> InteractionRecord {
        let c = &self.config;
        let d = self.durations[v];
        InteractionRecord {
            user_id: u as u64,
            video_id: v as u64,
            duration: d,
            watch_time: d * watch_fraction(self.interest(u, v), c.interest_scale, c.interest_offset, eps),
            dense_features: vec![self.duration_z[v], self.video_stat[v]],
            id_features: vec![u as u32, v as u32],
        }
    }

    fn check_pair(&self, u: usize, v: usize) -> Result<()> {
        if u >= self.config.n_users || v >= self.config.n_videos {
            return Err(Error::invalid(format!("pair ({u}, {v}) outside the world")));
        }
        Ok(())
    }
}

/// Watched fraction `sigmoid(a s + b + eps)`.
pub fn watch_fraction(s: f64, a: f64, b: f64, eps: f64) -> f64 {
    sigmoid(a * s + b + eps)
}

fn standardize(xs: &mut [f64]) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    for x in xs.iter_mut() {
        *x = if sd > 1e-12 { (*x - mean) / sd } else { 0.0 };
    }
}

pub fn generate_world(c: &GenConfig) -> Result<World> {
    c.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let p = c.latent_dim;
    let users: Vec<f64> = (0..c.n_users * p).map(|_| rng.sample(StandardNormal)).collect();
    let videos: Vec<f64> = (0..c.n_videos * p).map(|_| rng.sample(StandardNormal)).collect();
    let [lo, hi] = c.duration_range;
    let (llo, lhi) = (lo.ln(), hi.ln());
    let durations: Vec<f64> = (0..c.n_videos)
        .map(|_| {
            let t: f64 = rng.gen();
            (llo + t * (lhi - llo)).exp().clamp(lo, hi)
        })
        .collect();
    let mut duration_z: Vec<f64> = durations.iter().map(|d| d.ln()).collect();
    standardize(&mut duration_z);
    let mut world = World {
        config: c.clone(),
        users,
        videos,
        durations,
        duration_z,
        video_stat: Vec::new(),
    };
    let mut stat: Vec<f64> = (0..c.n_videos)
        .map(|v| {
            let total: f64 = (0..c.n_users)
                .map(|u| watch_fraction(world.interest(u, v), c.interest_scale, c.interest_offset, 0.0))
                .sum();
            total / c.n_users as f64
        })
        .collect();
    standardize(&mut stat);
    world.video_stat = stat;
    Ok(world)
}

/// Independent generator for event `i` of a stream, so events can be produced
/// in any order.
fn event_rng(seed: u64, stream: u64, i: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(u128::from(i) << 20);
    rng
}

fn noise(rng: &mut impl Rng, sd: f64) -> f64 {
    if sd == 0.0 {
        0.0
    } else {
        sd * rng.sample::<f64, _>(StandardNormal)
    }
}

/// Events logged under the duration- and interest-tilted exposure policy.
pub fn sample_logged_interactions(w: &World, n: usize, seed: u64) -> Result<Dataset> {
    let c = &w.config;
    let mut logits = vec![0.0; c.slate_size];
    let mut slate = vec![0usize; c.slate_size];
    let records = (0..n as u64)
        .map(|i| {
            let mut rng = event_rng(seed, STREAM_LOGGED, i);
            let u = rng.gen_range(0..c.n_users);
            for (k, l) in slate.iter_mut().zip(logits.iter_mut()) {
                *k = rng.gen_range(0..c.n_videos);
                *l = c.exposure_bias * w.duration_z[*k] + c.exposure_interest * w.interest(u, *k);
            }
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for l in logits.iter_mut() {
                *l = (*l - max).exp();
                total += *l;
            }
            let mut r = rng.gen::<f64>() * total;
            let mut pick = slate[c.slate_size - 1];
            for (&k, &e) in slate.iter().zip(&logits) {
                if r < e {
                    pick = k;
                    break;
                }
                r -= e;
            }
            let eps = noise(&mut rng, c.noise_sd);
            w.record(u, pick, eps)
        })
        .collect();
    Dataset::new(w.schema(), records)
}

/// Uniform users and uniform videos: the distribution a deconfounded
/// predictor should be judged on.
pub fn sample_unbiased_test(w: &World, n: usize, seed: u64) -> Result<Dataset> {
    let c = &w.config;
    let records = (0..n as u64)
        .map(|i| {
            let mut rng = event_rng(seed, STREAM_UNBIASED, i);
            let u = rng.gen_range(0..c.n_users);
            let v = rng.gen_range(0..c.n_videos);
            let eps = noise(&mut rng, c.noise_sd);
            w.record(u, v, eps)
        })
        .collect();
    Dataset::new(w.schema(), records)
}

/// `E[W | do(u, v)] = d_v * E[sigmoid(a s + b + eps)]`, integrated over the
/// noise with 64-point Gauss-Hermite quadrature.
pub fn true_expected_watch_time(w: &World, u: usize, v: usize) -> Result<f64> {
    w.check_pair(u, v)?;
    let c = &w.config;
    let mu = c.interest_scale * w.interest(u, v) + c.interest_offset;
    Ok(w.durations[v] * logit_normal_mean(mu, c.noise_sd))
}

/// `E[sigmoid(mu + sd * Z)]` for standard normal `Z`.
pub fn logit_normal_mean(mu: f64, sd: f64) -> f64 {
    if sd == 0.0 {
        return sigmoid(mu);
    }
    let (x, wts) = gauss_hermite(QUADRATURE_POINTS);
    let s: f64 = x
        .iter()
        .zip(&wts)
        .map(|(xi, wi)| wi * sigmoid(mu + std::f64::consts::SQRT_2 * sd * xi))
        .sum();
    s / std::f64::consts::PI.sqrt()
}

/// Nodes and weights for `int f(x) exp(-x^2) dx`, by Newton iteration on the
/// orthonormal Hermite recurrence.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    const PI_M4: f64 = 0.751_125_544_464_942_5;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    let mut z = 0.0;
    for i in 0..n.div_ceil(2) {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-0.166_67),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = PI_M4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// A finite world with exact conditional tables, for checking adjustment
/// arithmetic against enumeration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteToyWorld {
    pub n_users: usize,
    pub n_videos: usize,
    /// Duration support, seconds, strictly increasing.
    pub durations: Vec<f64>,
    pub p_duration: Vec<f64>,
    /// `E[W | u, v, d]` at `[(u * n_videos + v) * n_durations + d]`.
    pub expected_watch: Vec<f64>,
    /// `P(V = v | D = d)` at `[d * n_videos + v]`; the exposure-bias edge.
    pub exposure: Vec<f64>,
    /// Realized watch time is `E[W|u,v,d] * (1 + noise * U(-1, 1))`.
    pub relative_noise: f64,
}

/// Inputs to [`make_toy_world`]. A missing exposure table means uniform
/// exposure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyWorldSpec {
    pub n_users: usize,
    pub n_videos: usize,
    pub durations: Vec<f64>,
    pub p_duration: Vec<f64>,
    pub expected_watch: Vec<f64>,
    pub exposure: Option<Vec<f64>>,
    pub relative_noise: f64,
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::invalid(format!("{what} has a negative or non-finite entry")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("{what} sums to {total}, not 1")));
    }
    Ok(())
}

pub fn make_toy_world(spec: ToyWorldSpec) -> Result<DiscreteToyWorld> {
    let nd = spec.durations.len();
    if spec.n_users == 0 || spec.n_videos == 0 || nd == 0 {
        return Err(Error::invalid("toy world supports must be non-empty"));
    }
    if spec.durations.iter().any(|d| !(d.is_finite() && *d > 0.0)) || spec.durations.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("toy durations must be positive and strictly increasing"));
    }
    if spec.p_duration.len() != nd {
        return Err(Error::MissingEntry(format!(
            "P(D) has {} entries for {nd} durations",
            spec.p_duration.len()
        )));
    }
    check_distribution(&spec.p_duration, "P(D)")?;
    let cells = spec.n_users * spec.n_videos * nd;
    if spec.expected_watch.len() != cells {
        return Err(Error::MissingEntry(format!(
            "E[W|u,v,d] has {} entries, expected {cells}",
            spec.expected_watch.len()
        )));
    }
    if spec.expected_watch.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::invalid("E[W|u,v,d] entries must be finite and >= 0"));
    }
    let exposure = match spec.exposure {
        Some(e) => {
            if e.len() != nd * spec.n_videos {
                return Err(Error::MissingEntry(format!(
                    "P(V|D) has {} entries, expected {}",
                    e.len(),
                    nd * spec.n_videos
                )));
            }
            for (d, row) in e.chunks(spec.n_videos).enumerate() {
                check_distribution(row, &format!("P(V|D={})", spec.durations[d]))?;
            }
            e
        }
        None => vec![1.0 / spec.n_videos as f64; nd * spec.n_videos],
    };
    if !(spec.relative_noise.is_finite() && (0.0..1.0).contains(&spec.relative_noise)) {
        return Err(Error::invalid("relative_noise must lie in [0, 1)"));
    }
    Ok(DiscreteToyWorld {
        n_users: spec.n_users,
        n_videos: spec.n_videos,
        durations: spec.durations,
        p_duration: spec.p_duration,
        expected_watch: spec.expected_watch,
        exposure,
        relative_noise: spec.relative_noise,
    })
}

impl DiscreteToyWorld {
    pub fn n_durations(&self) -> usize {
        self.durations.len()
    }

    pub fn expected(&self, u: usize, v: usize, d: usize) -> Result<f64> {
        if u >= self.n_users || v >= self.n_videos || d >= self.n_durations() {
            return Err(Error::MissingEntry(format!("E[W|u={u},v={v},d={d}]")));
        }
        Ok(self.expected_watch[(u * self.n_videos + v) * self.n_durations() + d])
    }

    /// `P(D = d | V = v)` under the logging policy.
    pub fn p_duration_given_video(&self, v: usize) -> Result<Vec<f64>> {
        if v >= self.n_videos {
            return Err(Error::MissingEntry(format!("video {v}")));
        }
        let joint: Vec<f64> = (0..self.n_durations())
            .map(|d| self.p_duration[d] * self.exposure[d * self.n_videos + v])
            .collect();
        let total: f64 = joint.iter().sum();
        if total == 0.0 {
            return Err(Error::MissingEntry(format!("video {v} is never exposed")));
        }
        Ok(joint.into_iter().map(|x| x / total).collect())
    }

    /// The confounded regression target `E[W | u, v]` under the logging policy.
    pub fn observational_mean(&self, u: usize, v: usize) -> Result<f64> {
        let post = self.p_duration_given_video(v)?;
        post.iter()
            .enumerate()
            .map(|(d, p)| Ok(p * self.expected(u, v, d)?))
            .sum()
    }

    pub fn schema(&self) -> Schema {
        let mut s = Schema::new(0, vec![self.n_users as u32, self.n_videos as u32]);
        s.id_names = vec!["user".into(), "video".into()];
        s
    }

    /// Logged events: `d ~ P(D)`, `v ~ P(V|d)`, `u` uniform.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Dataset> {
        let nd = self.n_durations();
        let records = (0..n as u64)
            .map(|i| {
                let mut rng = event_rng(seed, STREAM_TOY, i);
                let d = categorical(&mut rng, &self.p_duration).min(nd - 1);
                let row = &self.exposure[d * self.n_videos..(d + 1) * self.n_videos];
                let v = categorical(&mut rng, row).min(self.n_videos - 1);
                let u = rng.gen_range(0..self.n_users);
                let jitter = if self.relative_noise > 0.0 {
                    self.relative_noise * rng.gen_range(-1.0..1.0)
                } else {
                    0.0
                };
                let e = self.expected_watch[(u * self.n_videos + v) * nd + d];
                InteractionRecord {
                    user_id: u as u64,
                    video_id: v as u64,
                    duration: self.durations[d],
                    watch_time: e * (1.0 + jitter),
                    dense_features: vec![],
                    id_features: vec![u as u32, v as u32],
                }
            })
            .collect();
        Dataset::new(self.schema(), records)
    }
}

fn categorical(rng: &mut impl Rng, p: &[f64]) -> usize {
    let mut r: f64 = rng.gen();
    for (i, &pi) in p.iter().enumerate() {
        if r < pi {
            return i;
        }
        r -= pi;
    }
    p.iter().rposition(|&x| x > 0.0).unwrap_or(0)
}
