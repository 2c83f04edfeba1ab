//! Poisson quotients of scalar measures and their boundary limits.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::quadrature::{integrate, QuadOptions};

pub type ScalarEval = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Density `h ≥ 0` on `[lo, hi]`; the ends may be infinite.
#[derive(Clone)]
pub struct DensityPiece {
    pub lo: f64,
    pub hi: f64,
    pub density: ScalarEval,
    pub breaks: Vec<f64>,
}

impl std::fmt::Debug for DensityPiece {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "DensityPiece[{}, {}]", self.lo, self.hi)
    }
}

/// Positive scalar measure: densities plus point masses.
#[derive(Clone, Debug, Default)]
pub struct ScalarMeasureModel {
    pub pieces: Vec<DensityPiece>,
    /// `(location, mass)`
    pub atoms: Vec<(f64, f64)>,
}

impl ScalarMeasureModel {
    pub fn new(pieces: Vec<DensityPiece>, atoms: Vec<(f64, f64)>) -> Result<Self> {
        for p in &pieces {
            if !(p.lo < p.hi) || p.lo.is_nan() || p.hi.is_nan() {
                return Err(Error::structural(format!(
                    "density piece [{}, {}] is empty",
                    p.lo, p.hi
                )));
            }
        }
        for &(x, m) in &atoms {
            if !x.is_finite() || !(m > 0.0 && m.is_finite()) {
                return Err(Error::structural(format!(
                    "atom at {x} needs a finite positive mass, got {m}"
                )));
            }
        }
        let mut atoms = atoms;
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let model = ScalarMeasureModel { pieces, atoms };
        let g = model.growth()?;
        if !g.is_finite() {
            return Err(Error::structural("∫ dμ/(t²+1) is not finite"));
        }
        Ok(model)
    }

    pub fn dirac(x: f64, mass: f64) -> Result<Self> {
        Self::new(vec![], vec![(x, mass)])
    }

    pub fn lebesgue(lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![DensityPiece::constant(lo, hi, 1.0)], vec![])
    }

    pub fn with_atom(mut self, x: f64, mass: f64) -> Result<Self> {
        self.atoms.push((x, mass));
        Self::new(self.pieces, self.atoms)
    }

    pub fn scaled(&self, k: f64) -> Result<Self> {
        let pieces = self
            .pieces
            .iter()
            .map(|p| {
                let d = p.density.clone();
                DensityPiece {
                    density: Arc::new(move |t| k * d(t)),
                    ..p.clone()
                }
            })
            .collect();
        Self::new(pieces, self.atoms.iter().map(|&(x, m)| (x, k * m)).collect())
    }

    /// `∫ dμ(t)/(t² + 1)`
    pub fn growth(&self) -> Result<f64> {
        let one = ScalarFn::constant(1.0);
        Ok(poisson_parts(self, &one, 0.0, 1.0)?.1)
    }

    /// Whether `s` lies in the closed support.
    pub fn supports(&self, s: f64) -> bool {
        self.atoms.iter().any(|&(x, _)| x == s) || self.pieces.iter().any(|p| p.lo <= s && s <= p.hi)
    }
}

impl DensityPiece {
    pub fn constant(lo: f64, hi: f64, value: f64) -> Self {
        DensityPiece {
            lo,
            hi,
            density: Arc::new(move |_| value),
            breaks: vec![],
        }
    }
}

/// Bounded real evaluator with known jump points and a bound on `|f|`.
#[derive(Clone)]
pub struct ScalarFn {
    pub eval: ScalarEval,
    pub breaks: Vec<f64>,
    pub sup: f64,
}

impl std::fmt::Debug for ScalarFn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ScalarFn(sup = {})", self.sup)
    }
}

impl ScalarFn {
    pub fn new(eval: impl Fn(f64) -> f64 + Send + Sync + 'static, breaks: Vec<f64>, sup: f64) -> Self {
        ScalarFn {
            eval: Arc::new(eval),
            breaks,
            sup,
        }
    }

    pub fn constant(v: f64) -> Self {
        Self::new(move |_| v, vec![], v.abs())
    }

    pub fn shifted(&self, k: f64) -> Self {
        let e = self.eval.clone();
        ScalarFn::new(move |t| e(t) + k, self.breaks.clone(), self.sup + k.abs())
    }
}

const UNDERFLOW_GUARD: f64 = 1e-290;

fn quad_opts() -> QuadOptions {
    QuadOptions {
        rel_tol: 1e-13,
        abs_tol: 1e-300,
        max_subdivisions: 4000,
    }
}

/// `(∫ P f dμ, ∫ P dμ)` with `P(t) = r/((s-t)² + r²)`.
fn poisson_parts(mu: &ScalarMeasureModel, f: &ScalarFn, s: f64, r: f64) -> Result<(f64, f64)> {
    if !(r > 0.0) {
        return Err(Error::config("Poisson scale must be positive"));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    // atoms, summed exactly
    for &(x, m) in &mu.atoms {
        let k = r / ((s - x) * (s - x) + r * r) * m;
        num += k * (f.eval)(x);
        den += k;
    }
    // densities under t = s + r tan θ, where P dt = dθ
    let theta = |t: f64| ((t - s) / r).atan();
    for p in &mu.pieces {
        let (a, b) = (theta(p.lo), theta(p.hi));
        if !(b > a) {
            continue;
        }
        let breaks: Vec<f64> = p.breaks.iter().chain(&f.breaks).map(|&t| theta(t)).collect();
        let d = p.density.clone();
        let e = f.eval.clone();
        let opts = quad_opts();
        let nd = integrate(|th: f64| d(s + r * th.tan()), a, b, &breaks, &opts)?;
        // the numerator can cancel to zero; |∫ P f dμ| ≤ sup|f| ∫ P dμ sets the scale
        let opts = QuadOptions {
            abs_tol: (1e-14 * f.sup * nd.value).max(opts.abs_tol),
            ..opts
        };
        let nn = integrate(
            |th: f64| {
                let t = s + r * th.tan();
                d(t) * e(t)
            },
            a,
            b,
            &breaks,
            &opts,
        )?;
        num += nn.value;
        den += nd.value;
    }
    Ok((num, den))
}

/// `∫ P f dμ / ∫ P dμ` with `P(t) = r/((s-t)² + r²)`.
pub fn poisson_quotient(mu: &ScalarMeasureModel, f: &ScalarFn, s: f64, r: f64) -> Result<f64> {
    let (num, den) = poisson_parts(mu, f, s, r)?;
    if !(den > UNDERFLOW_GUARD) {
        return Err(Error::accuracy(
            format!("Poisson denominator vanishes at s = {s}, r = {r}"),
            den,
        ));
    }
    Ok(num / den)
}

#[derive(Clone, Debug, Serialize)]
pub struct FatouRow {
    pub r: f64,
    pub quotient: f64,
    /// `16 ‖f‖_∞ (s² + 1) r/δ² ∫ dμ/(t² + 1)`
    pub tail_bound: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FatouScan {
    pub s: f64,
    pub delta: f64,
    pub rows: Vec<FatouRow>,
    /// Linear-in-`r` extrapolation from the two smallest `r`.
    pub limit: f64,
    /// `|q(r) - limit|` never grows as `r` decreases.
    pub monotone: bool,
    pub caveat: Option<String>,
}

/// Quotients along a decreasing `r` schedule, with the far-field bound
/// for a user `δ`.
pub fn fatou_convergence_scan(
    mu: &ScalarMeasureModel,
    f: &ScalarFn,
    s: f64,
    rs: &[f64],
    delta: f64,
) -> Result<FatouScan> {
    if rs.is_empty() || rs.iter().any(|&r| !(r > 0.0)) || rs.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::config("r schedule must be positive and strictly decreasing"));
    }
    if !(delta > 0.0) {
        return Err(Error::config("δ must be positive"));
    }
    let growth = mu.growth()?;
    let rows = rs
        .iter()
        .map(|&r| {
            Ok(FatouRow {
                r,
                quotient: poisson_quotient(mu, f, s, r)?,
                tail_bound: 16.0 * f.sup * (s * s + 1.0) * r / (delta * delta) * growth,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let limit = match rows.len() {
        1 => rows[0].quotient,
        n => {
            let (a, b) = (&rows[n - 2], &rows[n - 1]);
            (a.r * b.quotient - b.r * a.quotient) / (a.r - b.r)
        }
    };
    let errs: Vec<f64> = rows.iter().map(|q| (q.quotient - limit).abs()).collect();
    let scale = limit.abs().max(1.0);
    let monotone = errs.windows(2).all(|w| w[1] <= w[0] + 1e-14 * scale);
    let caveat = (!mu.supports(s)).then(|| format!("{s} is outside the support of μ, so it is not a Lebesgue point"));
    Ok(FatouScan {
        s,
        delta,
        rows,
        limit,
        monotone,
        caveat,
    })
}

/// `r_k = r0 · ratio^k`, `k = 0..count`
pub fn geometric_schedule(r0: f64, ratio: f64, count: usize) -> Vec<f64> {
    (0..count).map(|k| r0 * ratio.powi(k as i32)).collect()
}
