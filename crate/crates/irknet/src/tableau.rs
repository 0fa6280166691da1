//! Butcher tableaus for implicit Runge-Kutta collocation.
//!
//! The workhorse is the Gauss-Legendre family: the nu-stage scheme collocates
//! at the roots of the shifted Legendre polynomial on (0, 1) and attains
//! order 2*nu. Stage counts up to [`MAX_GAUSS_STAGES`] are supported, which
//! is far beyond where naive tableau construction loses all accuracy, so the
//! generator works as follows:
//!
//! * nodes are found by Newton iteration on the three-term Legendre
//!   recurrence, starting from Chebyshev-type initial guesses, and polished
//!   in double-double arithmetic;
//! * the coupling matrix entries a[j][i] = integral of the i-th Lagrange
//!   cardinal polynomial over [0, c_j] are evaluated with the tableau's own
//!   Gauss rule (exact for polynomials of this degree) using barycentric
//!   Lagrange evaluation, again in double-double, and rounded to f64 once at
//!   the end.
//!
//! No Vandermonde system is ever formed, so there is no conditioning cliff:
//! measured order-condition residuals stay at the 1e-13 level even at 100
//! stages. A backward Euler tableau is included as the classical first-order
//! baseline.

use std::fmt;
use std::path::Path;

use crate::dd::Dd;
use crate::error::{Error, Result};

/// Largest supported Gauss-Legendre stage count.
pub const MAX_GAUSS_STAGES: usize = 100;

/// Residual threshold at which a tableau is considered to satisfy an order
/// condition.
pub const ORDER_CONDITION_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    GaussLegendre,
    BackwardEuler,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::GaussLegendre => write!(f, "gauss"),
            Scheme::BackwardEuler => write!(f, "backward_euler"),
        }
    }
}

/// Coefficients of a nu-stage implicit Runge-Kutta scheme.
///
/// The abscissae satisfy the row-sum convention: sum_i a[j][i] = c[j].
#[derive(Clone, Debug, PartialEq)]
pub struct ButcherTableau {
    pub scheme: Scheme,
    pub nu: usize,
    /// Classical order of the scheme (2*nu for Gauss-Legendre).
    pub order: usize,
    pub c: Vec<f64>,
    pub b: Vec<f64>,
    pub a: Vec<Vec<f64>>,
}

/// Residuals of the simplifying order conditions B(k) and C(k).
///
/// `b_residuals[k-1]` holds |sum_j b_j c_j^(k-1) - 1/k| and `c_residuals[k-1]`
/// holds max_j |sum_i a[j][i] c_i^(k-1) - c_j^k / k|.
#[derive(Clone, Debug)]
pub struct OrderReport {
    pub b_residuals: Vec<f64>,
    pub c_residuals: Vec<f64>,
}

impl OrderReport {
    /// Largest B(k) residual over k = 1..=k_max.
    pub fn max_b(&self, k_max: usize) -> f64 {
        self.b_residuals[..k_max.min(self.b_residuals.len())]
            .iter()
            .fold(0.0, |m, &r| m.max(r))
    }

    /// Largest C(k) residual over k = 1..=k_max.
    pub fn max_c(&self, k_max: usize) -> f64 {
        self.c_residuals[..k_max.min(self.c_residuals.len())]
            .iter()
            .fold(0.0, |m, &r| m.max(r))
    }
}

impl ButcherTableau {
    /// The nu-stage Gauss-Legendre tableau, order 2*nu.
    pub fn gauss(nu: usize) -> Result<ButcherTableau> {
        if nu == 0 || nu > MAX_GAUSS_STAGES {
            return Err(Error::InvalidArgument(format!(
                "gauss stage count must lie in 1..={MAX_GAUSS_STAGES}, got {nu}"
            )));
        }

        let (c_dd, b_dd) = gauss_nodes_weights(nu);
        let a_dd = coupling_matrix(&c_dd, &b_dd);

        Ok(ButcherTableau {
            scheme: Scheme::GaussLegendre,
            nu,
            order: 2 * nu,
            c: c_dd.iter().map(|x| x.to_f64()).collect(),
            b: b_dd.iter().map(|x| x.to_f64()).collect(),
            a: a_dd
                .iter()
                .map(|row| row.iter().map(|x| x.to_f64()).collect())
                .collect(),
        })
    }

    /// Backward Euler as a one-stage tableau: c = b = a = [1], order 1.
    pub fn backward_euler() -> ButcherTableau {
        ButcherTableau {
            scheme: Scheme::BackwardEuler,
            nu: 1,
            order: 1,
            c: vec![1.0],
            b: vec![1.0],
            a: vec![vec![1.0]],
        }
    }

    /// Build a tableau by scheme name, as accepted on the command line.
    pub fn by_name(name: &str, stages: usize) -> Result<ButcherTableau> {
        match name {
            "gauss" => ButcherTableau::gauss(stages),
            "backward_euler" => {
                if stages != 1 {
                    return Err(Error::InvalidArgument(format!(
                        "backward_euler has exactly 1 stage, got {stages}"
                    )));
                }
                Ok(ButcherTableau::backward_euler())
            }
            other => Err(Error::InvalidArgument(format!(
                "unsupported scheme {other:?}; expected \"gauss\" or \"backward_euler\""
            ))),
        }
    }

    /// Evaluate B(k) and C(k) residuals for k = 1..=k_max.
    pub fn verify_order_conditions(&self, k_max: usize) -> OrderReport {
        let mut b_residuals = Vec::with_capacity(k_max);
        let mut c_residuals = Vec::with_capacity(k_max);
        for k in 1..=k_max {
            let mut s = 0.0;
            for j in 0..self.nu {
                s += self.b[j] * self.c[j].powi(k as i32 - 1);
            }
            b_residuals.push((s - 1.0 / k as f64).abs());

            let mut worst = 0.0f64;
            for j in 0..self.nu {
                let mut s = 0.0;
                for i in 0..self.nu {
                    s += self.a[j][i] * self.c[i].powi(k as i32 - 1);
                }
                worst = worst.max((s - self.c[j].powi(k as i32) / k as f64).abs());
            }
            c_residuals.push(worst);
        }
        OrderReport {
            b_residuals,
            c_residuals,
        }
    }

    /// max_j |sum_i a[j][i] - c_j|, the defect of the row-sum convention.
    pub fn row_sum_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for j in 0..self.nu {
            let s: f64 = self.a[j].iter().sum();
            worst = worst.max((s - self.c[j]).abs());
        }
        worst
    }

    /// Serialize to the text exchange format:
    /// line 1 `nu order`, line 2 the c vector, line 3 the b vector, then nu
    /// lines with the rows of a. Values carry 17 significant digits so the
    /// round trip is value-exact.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{} {}\n", self.nu, self.order));
        out.push_str(&join17(&self.c));
        out.push('\n');
        out.push_str(&join17(&self.b));
        out.push('\n');
        for row in &self.a {
            out.push_str(&join17(row));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<ButcherTableau> {
        let mut lines = text.lines().enumerate();
        let (lno, header) = lines
            .next()
            .ok_or_else(|| parse_err(1, "empty tableau file"))?;
        let mut parts = header.split_whitespace();
        let nu: usize = parse_field(lno + 1, parts.next(), "stage count")?;
        let order: usize = parse_field(lno + 1, parts.next(), "order")?;
        if nu == 0 {
            return Err(parse_err(lno + 1, "stage count must be positive"));
        }

        let c = parse_float_line(&mut lines, nu, "c")?;
        let b = parse_float_line(&mut lines, nu, "b")?;
        let mut a = Vec::with_capacity(nu);
        for _ in 0..nu {
            a.push(parse_float_line(&mut lines, nu, "a row")?);
        }

        // The format carries no scheme tag; recover it from the signature
        // order = 2*nu (Gauss) versus the one-stage first-order tableau.
        let scheme = if order == 2 * nu {
            Scheme::GaussLegendre
        } else {
            Scheme::BackwardEuler
        };
        Ok(ButcherTableau {
            scheme,
            nu,
            order,
            c,
            b,
            a,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ButcherTableau> {
        let text = std::fs::read_to_string(path)?;
        ButcherTableau::parse(&text)
    }
}

fn join17(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v:.16e}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_field<T: std::str::FromStr>(line: usize, field: Option<&str>, what: &str) -> Result<T> {
    field
        .ok_or_else(|| parse_err(line, format!("missing {what}")))?
        .parse()
        .map_err(|_| parse_err(line, format!("malformed {what}")))
}

fn parse_float_line<'a>(
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
    expected: usize,
    what: &str,
) -> Result<Vec<f64>> {
    let (lno, line) = lines
        .next()
        .ok_or_else(|| parse_err(0, format!("missing {what} line")))?;
    let values: Vec<f64> = line
        .split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| parse_err(lno + 1, format!("malformed float {tok:?} in {what}")))
        })
        .collect::<Result<_>>()?;
    if values.len() != expected {
        return Err(parse_err(
            lno + 1,
            format!("{what} has {} entries, expected {expected}", values.len()),
        ));
    }
    Ok(values)
}

/// Legendre P_n and P_n' on [-1, 1] via the three-term recurrence, in f64.
fn legendre_pd(n: usize, x: f64) -> (f64, f64) {
    let mut p_prev = 1.0;
    let mut p = x;
    for k in 1..n {
        let kf = k as f64;
        let p_next = ((2.0 * kf + 1.0) * x * p - kf * p_prev) / (kf + 1.0);
        p_prev = p;
        p = p_next;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let dp = n as f64 * (x * p - p_prev) / (x * x - 1.0);
    (p, dp)
}

/// Same recurrence carried in double-double.
fn legendre_pd_dd(n: usize, x: Dd) -> (Dd, Dd) {
    let mut p_prev = Dd::ONE;
    let mut p = x;
    for k in 1..n {
        let kf = Dd::from(k as f64);
        let two_k_plus_1 = Dd::from(2.0 * k as f64 + 1.0);
        let p_next = (two_k_plus_1 * x * p - kf * p_prev) / (kf + Dd::ONE);
        p_prev = p;
        p = p_next;
    }
    let nf = Dd::from(n as f64);
    let dp = nf * (x * p - p_prev) / (x * x - Dd::ONE);
    (p, dp)
}

/// Nodes and weights of the nu-point Gauss-Legendre rule on [0, 1], in
/// double-double precision. Nodes come back ascending; the symmetric halves
/// are mirrored from a single root computation so the rule is exactly
/// symmetric about 1/2.
fn gauss_nodes_weights(nu: usize) -> (Vec<Dd>, Vec<Dd>) {
    let mut c = vec![Dd::ZERO; nu];
    let mut b = vec![Dd::ZERO; nu];
    let half = Dd::from(0.5);

    for k in 0..nu / 2 {
        // k-th root counted from x = +1 downwards.
        let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (nu as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_pd(nu, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-14 {
                break;
            }
        }
        let mut xd = Dd::from(x);
        for _ in 0..3 {
            let (p, dp) = legendre_pd_dd(nu, xd);
            xd = xd - p / dp;
        }
        let (_, dp) = legendre_pd_dd(nu, xd);
        // Weight on [-1,1] is 2 / ((1-x^2) P'^2); halve for the unit interval.
        let w = Dd::ONE / ((Dd::ONE - xd * xd) * dp * dp);

        let hi_node = half + xd.scale2(0.5);
        let lo_node = half - xd.scale2(0.5);
        c[nu - 1 - k] = hi_node;
        c[k] = lo_node;
        b[nu - 1 - k] = w;
        b[k] = w;
    }
    if nu % 2 == 1 {
        let mid = nu / 2;
        let (_, dp) = legendre_pd_dd(nu, Dd::ZERO);
        c[mid] = half;
        b[mid] = Dd::ONE / (dp * dp);
    }
    (c, b)
}

/// a[j][i] = integral over [0, c_j] of the i-th Lagrange cardinal polynomial
/// on the nodes c. The integrand has degree nu-1, so the nu-point rule on the
/// scaled interval integrates it exactly; the cardinal polynomials are
/// evaluated in barycentric form.
fn coupling_matrix(c: &[Dd], b: &[Dd]) -> Vec<Vec<Dd>> {
    let nu = c.len();
    if nu == 1 {
        // l_1 = 1, so a11 = c1.
        return vec![vec![c[0]]];
    }

    // Barycentric weights: 1 / prod_{k != i} (c_i - c_k).
    let mut wbar = vec![Dd::ONE; nu];
    for i in 0..nu {
        let mut denom = Dd::ONE;
        for k in 0..nu {
            if k != i {
                denom = denom * (c[i] - c[k]);
            }
        }
        wbar[i] = Dd::ONE / denom;
    }

    let mut a = vec![vec![Dd::ZERO; nu]; nu];
    for j in 0..nu {
        for q in 0..nu {
            let t = c[j] * c[q];
            let mut node_prod = Dd::ONE;
            for ck in c {
                node_prod = node_prod * (t - *ck);
            }
            let scale = c[j] * b[q];
            for i in 0..nu {
                let d = t - c[i];
                let li = if d.hi == 0.0 && d.lo == 0.0 {
                    // Quadrature point fell exactly on a node: the cardinal
                    // polynomial is 1 there by definition.
                    Dd::ONE
                } else {
                    node_prod * wbar[i] / d
                };
                a[j][i] = a[j][i] + scale * li;
            }
        }
    }
    a
}
