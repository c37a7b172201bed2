//! Global least-squares fit of the free model parameters to measured link
//! performance.
//!
//! Each anchor contributes `r = (model - target) / scale` and `r^4` to the
//! residual vector. The quartic term makes the fit behave close to a
//! minimax fit: it keeps every anchor inside its scale before reducing the
//! overall misfit. The minimizer is Levenberg-Marquardt on
//! transformed parameters (log for positive values, logit for fractions).

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::keyrate::secure_rate;
use crate::linkbudget::{raw_rate_slope, LinkEvaluation};

#[derive(Debug, Clone, PartialEq)]
pub enum Quantity {
    RawRate {
        length_km: f64,
        compensated: bool,
    },
    SecureRate {
        length_km: f64,
        compensated: bool,
    },
    Qber {
        length_km: f64,
        compensated: bool,
    },
    /// QBER contribution of photons landing in adjacent gates.
    Interclock {
        length_km: f64,
        compensated: bool,
    },
    /// Fitted attenuation of the raw rate over uncompensated lengths, dB/km.
    RawSlope {
        lengths_km: Vec<f64>,
    },
    /// Raw rate at the configured length for another receiver efficiency.
    BiasRawRate {
        eta: f64,
    },
    /// Lowest QBER over the efficiency grid.
    BiasMinQber {
        etas: Vec<f64>,
    },
    /// Secure rate at `eta` over that at `eta_ref`.
    BiasSecureRatio {
        eta: f64,
        eta_ref: f64,
    },
    /// Relative secure-rate drop from `eta` to `eta_next`.
    BiasSecureDrop {
        eta: f64,
        eta_next: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scale {
    Absolute(f64),
    /// Fraction of the target.
    Relative(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bound {
    Equal,
    AtLeast,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub name: String,
    pub quantity: Quantity,
    pub target: f64,
    pub scale: Scale,
    pub bound: Bound,
}

impl Anchor {
    fn new(name: &str, quantity: Quantity, target: f64, scale: Scale) -> Self {
        Anchor {
            name: name.to_string(),
            quantity,
            target,
            scale,
            bound: Bound::Equal,
        }
    }

    fn at_least(mut self) -> Self {
        self.bound = Bound::AtLeast;
        self
    }

    fn normalized(&self, model: f64) -> f64 {
        let s = match self.scale {
            Scale::Absolute(s) => s,
            Scale::Relative(f) => f * self.target.abs(),
        };
        let r = (model - self.target) / s;
        match self.bound {
            Bound::Equal => r,
            Bound::AtLeast => r.min(0.0),
        }
    }
}

fn at(length_km: f64, compensated: bool) -> (f64, bool) {
    (length_km, compensated)
}

/// Measured performance of the reference link. Bias anchors refer to the
/// configured (shortest) length.
pub fn default_anchors() -> Vec<Anchor> {
    use Quantity::*;
    let rel = Scale::Relative;
    let abs = Scale::Absolute;
    let raw = |l: f64| RawRate {
        length_km: l,
        compensated: false,
    };
    let sec = |(l, c): (f64, bool)| SecureRate {
        length_km: l,
        compensated: c,
    };
    let q = |(l, c): (f64, bool)| Qber {
        length_km: l,
        compensated: c,
    };
    let grid = crate::sweep::default_eta_grid();
    let mut v = vec![
        Anchor::new("raw_rate_5.6km", raw(5.6), 9.16e6, rel(0.10)),
        Anchor::new("raw_rate_65.5km", raw(65.5), 3.48e5, rel(0.10)),
        Anchor::new(
            "raw_slope",
            RawSlope {
                lengths_km: vec![5.6, 25.3, 65.5],
            },
            0.24,
            abs(0.01),
        ),
        Anchor::new(
            "interclock_65.5km",
            Interclock {
                length_km: 65.5,
                compensated: false,
            },
            0.021,
            abs(0.003),
        ),
        Anchor::new("secure_5.6km", sec(at(5.6, false)), 2.37e6, rel(0.15)),
        Anchor::new("secure_25.3km", sec(at(25.3, false)), 6.84e5, rel(0.15)),
        Anchor::new("secure_65.5km", sec(at(65.5, false)), 2.79e4, rel(0.15)),
        Anchor::new("secure_75.8km_comp", sec(at(75.8, true)), 1.90e4, rel(0.20)),
        Anchor::new(
            "secure_101.1km_comp",
            sec(at(101.1, true)),
            2.88e3,
            rel(0.20),
        ),
        Anchor::new("qber_75.8km_comp", q(at(75.8, true)), 0.0630, abs(0.01)),
        Anchor::new("qber_101.1km_comp", q(at(101.1, true)), 0.0780, abs(0.01)),
        Anchor::new("qber_75.8km", q(at(75.8, false)), 0.16, abs(0.01)).at_least(),
        Anchor::new("bias_raw_2pct", BiasRawRate { eta: 0.02 }, 3.1e6, rel(0.15)),
        Anchor::new(
            "bias_raw_12pct",
            BiasRawRate { eta: 0.12 },
            18.2e6,
            rel(0.15),
        ),
        Anchor::new(
            "bias_min_qber",
            BiasMinQber { etas: grid },
            0.0155,
            abs(0.003),
        ),
        Anchor::new(
            "bias_secure_ratio",
            BiasSecureRatio {
                eta: 0.06,
                eta_ref: 0.02,
            },
            2.0,
            abs(0.3),
        ),
    ];
    v.push(
        Anchor::new(
            "bias_optimum_guard",
            BiasSecureDrop {
                eta: 0.06,
                eta_next: 0.065,
            },
            0.002,
            abs(0.002),
        )
        .at_least(),
    );
    v
}

fn evaluate_at(cfg: &SystemConfig, length_km: f64, compensated: bool, eta: f64) -> LinkEvaluation {
    cfg.link_at(length_km, compensated, eta).evaluate()
}

fn secure_of(cfg: &SystemConfig, ev: &LinkEvaluation) -> f64 {
    secure_rate(ev.raw_rate_hz, ev.qber(), &cfg.protocol_constants())
}

/// Model value of one quantity.
pub fn model_value(cfg: &SystemConfig, q: &Quantity) -> f64 {
    let eta0 = cfg.receiver.eta_bob;
    let base_len = cfg.channel.length_km;
    let base_comp = cfg.channel.compensated;
    match q {
        Quantity::RawRate {
            length_km,
            compensated,
        } => evaluate_at(cfg, *length_km, *compensated, eta0).raw_rate_hz,
        Quantity::SecureRate {
            length_km,
            compensated,
        } => secure_of(cfg, &evaluate_at(cfg, *length_km, *compensated, eta0)),
        Quantity::Qber {
            length_km,
            compensated,
        } => evaluate_at(cfg, *length_km, *compensated, eta0).qber(),
        Quantity::Interclock {
            length_km,
            compensated,
        } => {
            evaluate_at(cfg, *length_km, *compensated, eta0)
                .breakdown
                .e_interclock
        }
        Quantity::RawSlope { lengths_km } => {
            let raws: Vec<f64> = lengths_km
                .iter()
                .map(|l| evaluate_at(cfg, *l, false, eta0).raw_rate_hz)
                .collect();
            raw_rate_slope(lengths_km, &raws).map_or(f64::NAN, |s| s.0)
        }
        Quantity::BiasRawRate { eta } => evaluate_at(cfg, base_len, base_comp, *eta).raw_rate_hz,
        Quantity::BiasMinQber { etas } => etas
            .iter()
            .map(|e| evaluate_at(cfg, base_len, base_comp, *e).qber())
            .fold(f64::INFINITY, f64::min),
        Quantity::BiasSecureRatio { eta, eta_ref } => {
            let a = secure_of(cfg, &evaluate_at(cfg, base_len, base_comp, *eta));
            let b = secure_of(cfg, &evaluate_at(cfg, base_len, base_comp, *eta_ref));
            a / b
        }
        Quantity::BiasSecureDrop { eta, eta_next } => {
            let a = secure_of(cfg, &evaluate_at(cfg, base_len, base_comp, *eta));
            let b = secure_of(cfg, &evaluate_at(cfg, base_len, base_comp, *eta_next));
            (a - b) / a
        }
    }
}

/// Anchors whose targets are the model's own outputs for `cfg`.
pub fn anchors_from_model(cfg: &SystemConfig, like: &[Anchor]) -> Vec<Anchor> {
    like.iter()
        .map(|a| Anchor {
            target: model_value(cfg, &a.quantity),
            bound: Bound::Equal,
            ..a.clone()
        })
        .collect()
}

/// The fitted parameters, in the order used by the optimizer.
pub const PARAMETER_NAMES: [&str; 8] = [
    "calibration.spectral_width_nm",
    "calibration.line_fraction",
    "calibration.line_width_nm",
    "calibration.afterpulse_ref",
    "calibration.afterpulse_exponent",
    "calibration.dark_ref",
    "calibration.compensator_length_km",
    "calibration.compensator_loss_db",
];

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn pack(cfg: &SystemConfig) -> Result<[f64; 8]> {
    let c = &cfg.calibration;
    let comp = c.compensator_length_km.ok_or_else(|| {
        Error::invalid(
            "calibration.compensator_length_km",
            "required as a starting value for the fit",
        )
    })?;
    let vals = [
        c.spectral_width_nm,
        c.line_fraction,
        c.line_width_nm,
        c.afterpulse_ref,
        c.afterpulse_exponent,
        c.dark_ref,
        comp,
        c.compensator_loss_db,
    ];
    for (v, n) in vals.iter().zip(PARAMETER_NAMES) {
        if !(*v > 0.0) {
            return Err(Error::invalid(n, "fit needs a positive starting value"));
        }
    }
    if !(c.line_fraction < 1.0) {
        return Err(Error::invalid(
            PARAMETER_NAMES[1],
            "fit needs a value below 1",
        ));
    }
    Ok([
        vals[0].ln(),
        logit(vals[1]),
        vals[2].ln(),
        vals[3].ln(),
        vals[4].ln(),
        vals[5].ln(),
        vals[6].ln(),
        vals[7].ln(),
    ])
}

fn unpack(base: &SystemConfig, x: &[f64; 8]) -> SystemConfig {
    let mut cfg = base.clone();
    let c = &mut cfg.calibration;
    c.spectral_width_nm = x[0].exp();
    c.line_fraction = sigmoid(x[1]);
    c.line_width_nm = x[2].exp();
    c.afterpulse_ref = x[3].exp();
    c.afterpulse_exponent = x[4].exp();
    c.dark_ref = x[5].exp();
    c.compensator_length_km = Some(x[6].exp());
    c.compensator_loss_db = x[7].exp();
    cfg
}

#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    pub name: String,
    pub model: f64,
    pub target: f64,
    /// Misfit in units of the anchor scale.
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    pub config: SystemConfig,
    pub residuals: Vec<Residual>,
    pub iterations: usize,
    pub cost: f64,
    /// Afterpulse probability at 10% detector efficiency.
    pub afterpulse_at_10pct: f64,
}

impl CalibrationReport {
    pub fn max_abs_normalized(&self) -> f64 {
        self.residuals
            .iter()
            .map(|r| r.normalized.abs())
            .fold(0.0, f64::max)
    }

    /// Datasheet limit: afterpulsing stays below 6% up to 10% efficiency.
    pub fn afterpulse_limit_ok(&self) -> bool {
        self.afterpulse_at_10pct < 0.06
    }

    pub fn residual_table(&self) -> String {
        format_residuals(&self.residuals)
    }
}

fn format_residuals(rs: &[Residual]) -> String {
    let mut s = String::from("anchor,model,target,normalized\n");
    for r in rs {
        let _ = writeln!(
            s,
            "{},{:e},{:e},{:e}",
            r.name, r.model, r.target, r.normalized
        );
    }
    s
}

fn residuals(cfg: &SystemConfig, anchors: &[Anchor]) -> Vec<Residual> {
    anchors
        .iter()
        .map(|a| {
            let model = model_value(cfg, &a.quantity);
            Residual {
                name: a.name.clone(),
                model,
                target: a.target,
                normalized: a.normalized(model),
            }
        })
        .collect()
}

fn objective_vector(cfg: &SystemConfig, anchors: &[Anchor]) -> Vec<f64> {
    let mut v = Vec::with_capacity(2 * anchors.len());
    for a in anchors {
        let r = a.normalized(model_value(cfg, &a.quantity));
        v.push(r);
        v.push(r.powi(4));
    }
    v
}

fn cost(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Additional starting points around the initial parameters.
    pub restarts: usize,
    /// Half-width of the restart box in transformed parameter units.
    pub restart_spread: f64,
    /// Stop when the relative cost improvement falls below this.
    pub tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iterations: 400,
            restarts: 24,
            restart_spread: 1.0,
            tolerance: 1e-12,
        }
    }
}

/// Solve `a x = b` by Gaussian elimination with partial pivoting.
fn solve<const N: usize>(mut a: [[f64; N]; N], mut b: [f64; N]) -> Option<[f64; N]> {
    for col in 0..N {
        let piv = (col..N).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..N {
            let f = a[row][col] / a[col][col];
            let pivot_row = a[col];
            for (x, p) in a[row][col..].iter_mut().zip(&pivot_row[col..]) {
                *x -= f * p;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; N];
    for row in (0..N).rev() {
        let s: f64 = (row + 1..N).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

#[derive(Clone, Copy)]
struct Minimum {
    x: [f64; 8],
    cost: f64,
    iterations: usize,
    converged: bool,
}

fn levenberg_marquardt(
    cfg: &SystemConfig,
    anchors: &[Anchor],
    x0: [f64; 8],
    opts: &FitOptions,
) -> Minimum {
    let mut x = x0;
    let mut r = objective_vector(&unpack(cfg, &x), anchors);
    let mut c = cost(&r);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = false;
    const H: f64 = 1e-6;

    while iterations < opts.max_iterations {
        iterations += 1;
        // Central-difference Jacobian.
        let mut jac = vec![[0.0f64; 8]; r.len()];
        for p in 0..8 {
            let mut xp = x;
            let mut xm = x;
            xp[p] += H;
            xm[p] -= H;
            let rp = objective_vector(&unpack(cfg, &xp), anchors);
            let rm = objective_vector(&unpack(cfg, &xm), anchors);
            for i in 0..r.len() {
                jac[i][p] = (rp[i] - rm[i]) / (2.0 * H);
            }
        }
        let mut jtj = [[0.0f64; 8]; 8];
        let mut jtr = [0.0f64; 8];
        for (row, ri) in jac.iter().zip(&r) {
            for a in 0..8 {
                jtr[a] += row[a] * ri;
                for b in 0..8 {
                    jtj[a][b] += row[a] * row[b];
                }
            }
        }
        if jtr.iter().map(|g| g.abs()).fold(0.0, f64::max) < 1e-13 {
            converged = true;
            break;
        }
        let mut improved = false;
        for _ in 0..40 {
            let mut a = jtj;
            for d in 0..8 {
                a[d][d] += lambda * jtj[d][d].max(1e-12);
            }
            let neg: [f64; 8] = jtr.map(|g| -g);
            let Some(step) = solve(a, neg) else {
                lambda *= 10.0;
                continue;
            };
            let mut xn = x;
            for d in 0..8 {
                xn[d] += step[d];
            }
            let rn = objective_vector(&unpack(cfg, &xn), anchors);
            let cn = cost(&rn);
            if cn.is_finite() && cn < c {
                let rel = (c - cn) / c.max(1e-300);
                x = xn;
                r = rn;
                c = cn;
                lambda = (lambda / 3.0).max(1e-12);
                improved = true;
                if rel < opts.tolerance {
                    converged = true;
                }
                break;
            }
            lambda *= 4.0;
        }
        if !improved || converged {
            // No downhill step at any damping: a (local) minimum.
            converged = true;
            break;
        }
    }

    Minimum {
        x,
        cost: c,
        iterations,
        converged,
    }
}

/// Fit the calibration block of `cfg` to `anchors`, starting from the
/// values already in `cfg`. Extra starts scattered around it guard against
/// degenerate local minima; one of them replaces the direct fit only if it
/// is clearly better, so refitting a calibrated config is a no-op.
pub fn calibrate(
    cfg: &SystemConfig,
    anchors: &[Anchor],
    opts: &FitOptions,
) -> Result<CalibrationReport> {
    if anchors.is_empty() {
        return Err(Error::Empty("no calibration anchors"));
    }
    let x0 = pack(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut starts = vec![x0];
    for _ in 0..opts.restarts {
        starts.push(x0.map(|v| v + opts.restart_spread * (2.0 * rng.random::<f64>() - 1.0)));
    }
    let runs: Vec<Minimum> = starts
        .into_par_iter()
        .map(|s| levenberg_marquardt(cfg, anchors, s, opts))
        .collect();
    let direct = &runs[0];
    let mut best = direct;
    for m in &runs[1..] {
        if m.converged && m.cost.is_finite() && m.cost < best.cost * (1.0 - 1e-6) {
            best = m;
        }
    }
    let Minimum {
        x,
        cost: c,
        iterations,
        converged,
    } = *best;

    let fitted = unpack(cfg, &x);
    let res = residuals(&fitted, anchors);
    if !converged {
        return Err(Error::Fit {
            iterations,
            cost: c,
            residuals: format_residuals(&res),
        });
    }
    fitted.validate()?;
    let eta_10 = 0.10 * fitted.optics_transmission();
    Ok(CalibrationReport {
        afterpulse_at_10pct: fitted.calibration.afterpulse_at(eta_10),
        config: fitted,
        residuals: res,
        iterations,
        cost: c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solver_matches_known_system() {
        let a = [[4.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 2.0]];
        let x = solve(a, [1.0, 2.0, 3.0]).unwrap();
        for (row, b) in a.iter().zip([1.0, 2.0, 3.0]) {
            let lhs: f64 = row.iter().zip(&x).map(|(p, q)| p * q).sum();
            assert!((lhs - b).abs() < 1e-12);
        }
        assert!(solve([[0.0, 0.0], [0.0, 0.0]], [1.0, 1.0]).is_none());
    }

    #[test]
    fn transforms_round_trip() {
        let cfg = SystemConfig::default();
        let back = unpack(&cfg, &pack(&cfg).unwrap());
        let a = &cfg.calibration;
        let b = &back.calibration;
        assert!((a.line_fraction - b.line_fraction).abs() < 1e-14);
        assert!((a.dark_ref - b.dark_ref).abs() < 1e-20);
        assert!(
            (a.compensator_length_km.unwrap() - b.compensator_length_km.unwrap()).abs() < 1e-12
        );
    }

    #[test]
    fn one_sided_anchor() {
        let mut a = Anchor::new(
            "x",
            Quantity::BiasRawRate { eta: 0.06 },
            1.0,
            Scale::Absolute(0.5),
        );
        a.bound = Bound::AtLeast;
        assert_eq!(a.normalized(2.0), 0.0);
        assert_eq!(a.normalized(0.5), -1.0);
    }

    #[test]
    fn needs_compensator_start() {
        let mut cfg = SystemConfig::default();
        cfg.calibration.compensator_length_km = None;
        assert!(calibrate(&cfg, &default_anchors(), &FitOptions::default()).is_err());
    }
}
