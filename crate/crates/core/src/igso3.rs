//! Isotropic Gaussian on SO(3).
//!
//! The density with respect to the normalized Haar measure depends only on
//! the rotation angle `ω`:
//!
//! ```text
//! f(ω; ε) = Σ_{l=0}^{L} (2l+1) e^{−l(l+1)ε} sin((l+½)ω) / sin(ω/2)
//! ```
//!
//! and the angle marginal is `f(ω)(1 − cos ω)/π` on `[0, π]`. Below
//! [`ASYMPTOTIC_EPS`] the series needs too many terms and the small-time heat
//! kernel expansion is used instead.

use crate::error::{Error, Result};
use crate::lie::{exp_so3, log_so3, UnitQuat, Vec3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::Write;
use std::sync::{Arc, Mutex, OnceLock};

pub const ASYMPTOTIC_EPS: f64 = 1e-3;
pub const MAX_ORDER: usize = 2000;
pub const GRID_SIZE: usize = 4096;
const SERIES_TOL: f64 = 1e-12;

/// Number of log-spaced bins used to quantize concentrations during training.
pub const EPS_BINS: usize = 512;
const EPS_BIN_MIN: f64 = 1e-4;
const EPS_BIN_MAX: f64 = 10.0;

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("IGSO(3) concentration must be positive, got {eps}")))
    }
}

/// Smallest `L` with `(2L+1) e^{−L(L+1)ε} < 1e-12`, capped at [`MAX_ORDER`].
pub fn truncation_order(eps: f64) -> usize {
    (1..=MAX_ORDER)
        .find(|&l| {
            let l = l as f64;
            (2.0 * l + 1.0) * (-l * (l + 1.0) * eps).exp() < SERIES_TOL
        })
        .unwrap_or(MAX_ORDER)
}

/// Series value and its angle derivative for a fixed truncation order.
fn series(omega: f64, eps: f64, order: usize) -> (f64, f64) {
    let half = 0.5 * omega;
    let s_half = half.sin();
    let c_half = half.cos();
    let mut f = 0.0;
    let mut df = 0.0;
    // sin/cos((l+½)ω) by angle addition, one rotation by ω per step
    let (sw, cw) = omega.sin_cos();
    let (mut s, mut c) = (s_half, c_half);
    for l in 0..=order {
        let n = (2 * l + 1) as f64;
        let a = n * (-(l as f64) * (l as f64 + 1.0) * eps).exp();
        if n * omega < 1e-3 {
            let n2 = n * n;
            f += a * n * (1.0 - (n2 - 1.0) * omega * omega / 24.0);
            df += -a * n * (n2 - 1.0) * omega / 12.0;
        } else {
            let m = 0.5 * n;
            f += a * s / s_half;
            df += a * (m * c * s_half - 0.5 * s * c_half) / (s_half * s_half);
        }
        let (s_next, c_next) = (s * cw + c * sw, c * cw - s * sw);
        s = s_next;
        c = c_next;
    }
    (f, df)
}

fn asymptotic_density(omega: f64, eps: f64) -> f64 {
    let ratio = if omega < 1e-4 { 1.0 + omega * omega / 24.0 } else { 0.5 * omega / (0.5 * omega).sin() };
    PI.sqrt() * eps.powf(-1.5) * (0.25 * eps).exp() * ratio * (-omega * omega / (4.0 * eps)).exp()
}

fn asymptotic_dlog(omega: f64, eps: f64) -> f64 {
    // d/dω log[(ω/2)/sin(ω/2)] = 1/ω − ½ cot(ω/2)
    let corr = if omega < 1e-4 {
        omega / 12.0 + omega.powi(3) / 720.0
    } else {
        1.0 / omega - 0.5 / (0.5 * omega).tan()
    };
    -omega / (2.0 * eps) + corr
}

/// Truncated-series density at a fixed order. Small concentrations still go
/// through the series here; use [`igso3_density`] for the adaptive version.
pub fn igso3_density_with_order(omega: f64, eps: f64, order: usize) -> Result<f64> {
    check_eps(eps)?;
    if omega < 1e-12 {
        return Ok((0..=order)
            .map(|l| {
                let n = (2 * l + 1) as f64;
                n * n * (-(l as f64) * (l as f64 + 1.0) * eps).exp()
            })
            .sum());
    }
    Ok(series(omega, eps, order).0.max(0.0))
}

/// Density with respect to the normalized Haar measure, `ω ∈ [0, π]`.
pub fn igso3_density(omega: f64, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    if eps < ASYMPTOTIC_EPS {
        return Ok(asymptotic_density(omega, eps));
    }
    igso3_density_with_order(omega, eps, truncation_order(eps))
}

/// `d/dω log f(ω; ε)`.
pub fn dlog_density(omega: f64, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    if eps < ASYMPTOTIC_EPS {
        return Ok(asymptotic_dlog(omega, eps));
    }
    if omega < 1e-12 {
        return Ok(0.0);
    }
    let order = truncation_order(eps);
    let (f, df) = series(omega, eps, order);
    let f0 = igso3_density_with_order(0.0, eps, order)?;
    if f > 1e-10 * f0 {
        Ok(df / f)
    } else {
        // deep tail where the series cancels to noise
        Ok(asymptotic_dlog(omega, eps))
    }
}

/// Tabulated density, angle CDF and log-derivative for one concentration.
#[derive(Debug, Clone)]
pub struct IgSo3Table {
    pub epsilon: f64,
    pub angle_grid: Vec<f64>,
    pub f_values: Vec<f64>,
    pub cdf: Vec<f64>,
    pub dlogf: Vec<f64>,
}

impl IgSo3Table {
    pub fn build(eps: f64) -> Result<Self> {
        check_eps(eps)?;
        // the mass beyond ω² = 400ε is below e^{-100}
        let omega_max = PI.min(20.0 * eps.sqrt());
        let step = omega_max / (GRID_SIZE - 1) as f64;
        let angle_grid: Vec<f64> = (0..GRID_SIZE).map(|i| i as f64 * step).collect();
        let mut f_values = Vec::with_capacity(GRID_SIZE);
        let mut dlogf = Vec::with_capacity(GRID_SIZE);
        for &w in &angle_grid {
            f_values.push(igso3_density(w, eps)?.max(0.0));
            dlogf.push(dlog_density(w, eps)?);
        }
        let marginal: Vec<f64> =
            angle_grid.iter().zip(&f_values).map(|(w, f)| f * (1.0 - w.cos()) / PI).collect();
        let mut cdf = Vec::with_capacity(GRID_SIZE);
        let mut acc = 0.0;
        cdf.push(0.0);
        for i in 1..GRID_SIZE {
            acc += 0.5 * (marginal[i] + marginal[i - 1]) * step;
            cdf.push(acc);
        }
        if !(acc > 0.0 && acc.is_finite()) {
            return Err(Error::NonFinite(format!("IGSO(3) marginal for eps={eps} does not integrate")));
        }
        cdf.iter_mut().for_each(|c| *c /= acc);
        Ok(Self { epsilon: eps, angle_grid, f_values, cdf, dlogf })
    }

    /// Inverse CDF with linear interpolation.
    pub fn sample_angle(&self, u: f64) -> f64 {
        let i = self.cdf.partition_point(|&c| c < u).clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let (w0, w1) = (self.angle_grid[i - 1], self.angle_grid[i]);
        if c1 > c0 {
            w0 + (u - c0) / (c1 - c0) * (w1 - w0)
        } else {
            w0
        }
    }

    /// `omega,f,cdf,dlogf` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "omega,f,cdf,dlogf")?;
        for i in 0..self.angle_grid.len() {
            writeln!(
                out,
                "{},{},{},{}",
                self.angle_grid[i], self.f_values[i], self.cdf[i], self.dlogf[i]
            )?;
        }
        Ok(())
    }
}

type Slot = Arc<OnceLock<Arc<IgSo3Table>>>;

fn cache() -> &'static Mutex<HashMap<u64, Slot>> {
    static CACHE: OnceLock<Mutex<HashMap<u64, Slot>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Process-wide table for `eps`, built on first use.
pub fn table(eps: f64) -> Result<Arc<IgSo3Table>> {
    check_eps(eps)?;
    let slot = {
        let mut map = cache().lock().expect("igso3 cache poisoned");
        map.entry(eps.to_bits()).or_default().clone()
    };
    if let Some(t) = slot.get() {
        return Ok(t.clone());
    }
    let built = Arc::new(IgSo3Table::build(eps)?);
    Ok(slot.get_or_init(|| built).clone())
}

/// Snaps `eps` to the nearest of [`EPS_BINS`] log-spaced values.
pub fn quantize_eps(eps: f64) -> f64 {
    let (lo, hi) = (EPS_BIN_MIN.ln(), EPS_BIN_MAX.ln());
    let frac = ((eps.max(EPS_BIN_MIN).min(EPS_BIN_MAX)).ln() - lo) / (hi - lo);
    let k = (frac * (EPS_BINS - 1) as f64).round();
    (lo + k / (EPS_BINS - 1) as f64 * (hi - lo)).exp()
}

pub fn uniform_axis<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        if let Some(u) = v.normalized() {
            return u;
        }
    }
}

/// Draws a rotation from IGSO(3) with concentration `eps`.
pub fn igso3_sample<R: Rng + ?Sized>(eps: f64, rng: &mut R) -> Result<UnitQuat> {
    let t = table(eps)?;
    let omega = t.sample_angle(rng.random::<f64>());
    Ok(exp_so3(uniform_axis(rng) * omega))
}

/// Left-trivialized gradient of `log f` at `q`.
pub fn igso3_score(q: UnitQuat, eps: f64) -> Result<Vec3> {
    let phi = log_so3(q);
    let omega = phi.norm();
    if omega < 1e-12 {
        check_eps(eps)?;
        return Ok(Vec3::ZERO);
    }
    Ok(phi * (dlog_density(omega, eps)? / omega))
}

/// Score of an isotropic Gaussian, `−Δp / σ²`.
pub fn gauss_score(dp: Vec3, sigma: f64) -> Result<Vec3> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    Ok(dp * (-1.0 / (sigma * sigma)))
}
