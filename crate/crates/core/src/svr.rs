//! Epsilon-insensitive support vector regression solved in the dual with
//! pairwise (SMO) updates and maximal-violating-pair selection.
//!
//! The 2n-variable form is used: `a[i]` is alpha_i (sign +1) and
//! `a[i + n]` is alpha*_i (sign -1); the model keeps
//! `beta_i = alpha_i - alpha*_i`.

use std::fmt;

use crate::error::{Error, Result};

/// Curvature floor for the 2x2 subproblem (indefinite kernels).
const CURVATURE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelKind {
    Poly,
    Rbf,
    Sigmoid,
}

impl KernelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            KernelKind::Poly => "poly",
            KernelKind::Rbf => "rbf",
            KernelKind::Sigmoid => "sigmoid",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "poly" => Ok(KernelKind::Poly),
            "rbf" => Ok(KernelKind::Rbf),
            "sigmoid" => Ok(KernelKind::Sigmoid),
            other => Err(Error::argument(format!("unknown kernel `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gamma {
    /// `1 / (m * Var(X))` over all training entries.
    Scale,
    /// `1 / m`.
    Auto,
    Value(f64),
}

impl fmt::Display for Gamma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Gamma::Scale => write!(f, "scale"),
            Gamma::Auto => write!(f, "auto"),
            Gamma::Value(v) => write!(f, "{v}"),
        }
    }
}

impl Gamma {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "scale" => Ok(Gamma::Scale),
            "auto" => Ok(Gamma::Auto),
            other => other
                .parse::<f64>()
                .map(Gamma::Value)
                .map_err(|_| Error::argument(format!("bad gamma `{other}`"))),
        }
    }

    pub fn resolve(&self, x: &[Vec<f64>]) -> f64 {
        let m = x.first().map_or(1, Vec::len).max(1) as f64;
        match *self {
            Gamma::Value(g) => g,
            Gamma::Auto => 1.0 / m,
            Gamma::Scale => {
                let count = x.len() as f64 * m;
                let mean = x.iter().flatten().sum::<f64>() / count;
                let var = x.iter().flatten().map(|v| (v - mean).powi(2)).sum::<f64>() / count;
                if var > 0.0 {
                    1.0 / (m * var)
                } else {
                    1.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvrParams {
    pub kernel: KernelKind,
    pub c: f64,
    pub gamma: Gamma,
    pub epsilon: f64,
    pub degree: i32,
    pub coef0: f64,
    /// Stop once the maximal KKT violation falls to this level.
    pub tolerance: f64,
    /// Iteration cap, in passes of `n` pairwise updates.
    pub max_passes: usize,
}

impl Default for SvrParams {
    fn default() -> Self {
        Self {
            kernel: KernelKind::Rbf,
            c: 1.0,
            gamma: Gamma::Scale,
            epsilon: 0.1,
            degree: 3,
            coef0: 0.0,
            tolerance: 1e-3,
            max_passes: 10_000,
        }
    }
}

/// Kernel with gamma resolved to a number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel {
    pub kind: KernelKind,
    pub gamma: f64,
    pub degree: i32,
    pub coef0: f64,
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.kind {
            KernelKind::Rbf => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-self.gamma * d2).exp()
            }
            KernelKind::Poly => (self.gamma * dot(a, b) + self.coef0).powi(self.degree),
            KernelKind::Sigmoid => (self.gamma * dot(a, b) + self.coef0).tanh(),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Evaluates the kernel of `params` for a numeric gamma (`Scale`/`Auto` are
/// resolved against the two vectors alone).
pub fn kernel_eval(a: &[f64], b: &[f64], params: &SvrParams) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::argument(format!(
            "kernel dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let gamma = params.gamma.resolve(&[a.to_vec(), b.to_vec()]);
    Ok(Kernel {
        kind: params.kernel,
        gamma,
        degree: params.degree,
        coef0: params.coef0,
    }
    .eval(a, b))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvrModel {
    pub support_vectors: Vec<Vec<f64>>,
    /// `alpha_i - alpha*_i` for each support vector.
    pub coefficients: Vec<f64>,
    pub bias: f64,
    pub kernel: Kernel,
    pub converged: bool,
    pub iterations: usize,
    pub dual_objective: f64,
    /// Largest KKT violation when the solver stopped.
    pub kkt_gap: f64,
}

impl SvrModel {
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if let Some(sv) = self.support_vectors.first() {
            if sv.len() != x.len() {
                return Err(Error::argument(format!(
                    "model expects {} features, got {}",
                    sv.len(),
                    x.len()
                )));
            }
        }
        Ok(self
            .support_vectors
            .iter()
            .zip(&self.coefficients)
            .map(|(sv, b)| b * self.kernel.eval(sv, x))
            .sum::<f64>()
            + self.bias)
    }
}

pub fn predict_svr(model: &SvrModel, x: &[f64]) -> Result<f64> {
    model.predict(x)
}

/// Full dual solution over the training rows, kept for diagnostics.
#[derive(Debug, Clone)]
pub struct SvrSolution {
    pub model: SvrModel,
    /// `beta_i` for every training row, zero for non-support rows.
    pub beta: Vec<f64>,
    /// Dual objective after each pairwise update (only when requested).
    pub objective_trace: Vec<f64>,
}

pub fn fit_svr(x: &[Vec<f64>], y: &[f64], params: &SvrParams) -> Result<SvrModel> {
    Ok(solve_svr(x, y, params, false)?.model)
}

pub fn solve_svr(
    x: &[Vec<f64>],
    y: &[f64],
    params: &SvrParams,
    trace: bool,
) -> Result<SvrSolution> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return Err(Error::argument(format!(
            "SVR needs at least 2 rows with matching targets, got {n} rows and {} targets",
            y.len()
        )));
    }
    let dim = x[0].len();
    if x.iter().any(|r| r.len() != dim) {
        return Err(Error::argument("ragged feature rows"));
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::argument("SVR inputs must be finite"));
    }
    if !(params.c > 0.0) || !(params.epsilon >= 0.0) {
        return Err(Error::argument("SVR needs C > 0 and epsilon >= 0"));
    }
    let gamma = params.gamma.resolve(x);
    if !(gamma > 0.0) {
        return Err(Error::argument(format!("resolved gamma {gamma} must be positive")));
    }
    let kernel = Kernel {
        kind: params.kernel,
        gamma,
        degree: params.degree,
        coef0: params.coef0,
    };

    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let k = kernel.eval(&x[i], &x[j]);
            gram[i * n + j] = k;
            gram[j * n + i] = k;
        }
    }
    let c = params.c;
    let l = 2 * n;
    let sign = |t: usize| if t < n { 1.0 } else { -1.0 };
    let q = |s: usize, t: usize| sign(s) * sign(t) * gram[(s % n) * n + (t % n)];
    let p: Vec<f64> = (0..l)
        .map(|t| {
            if t < n {
                params.epsilon - y[t]
            } else {
                params.epsilon + y[t - n]
            }
        })
        .collect();
    let mut a = vec![0.0; l];
    let mut grad = p.clone();
    let objective = |a: &[f64], grad: &[f64]| -> f64 {
        -0.5 * a
            .iter()
            .zip(grad.iter().zip(&p))
            .map(|(ai, (g, pi))| ai * (g + pi))
            .sum::<f64>()
    };
    let mut objective_trace = Vec::new();
    let max_iter = params.max_passes.saturating_mul(n.max(1));
    let mut iterations = 0;
    let mut converged = false;
    let mut gap;

    let in_up = |t: usize, a: &[f64]| if t < n { a[t] < c } else { a[t] > 0.0 };
    let in_low = |t: usize, a: &[f64]| if t < n { a[t] > 0.0 } else { a[t] < c };

    loop {
        // maximal violating pair
        let mut gmax = f64::NEG_INFINITY;
        let mut gmin = f64::INFINITY;
        let (mut i, mut j) = (usize::MAX, usize::MAX);
        for t in 0..l {
            let v = -sign(t) * grad[t];
            if in_up(t, &a) && v > gmax {
                gmax = v;
                i = t;
            }
            if in_low(t, &a) && v < gmin {
                gmin = v;
                j = t;
            }
        }
        gap = if i == usize::MAX || j == usize::MAX {
            0.0
        } else {
            gmax - gmin
        };
        if gap <= params.tolerance {
            converged = true;
            break;
        }
        if iterations >= max_iter {
            break;
        }
        iterations += 1;

        let (old_ai, old_aj) = (a[i], a[j]);
        let qii = q(i, i);
        let qjj = q(j, j);
        let qij = q(i, j);
        if sign(i) != sign(j) {
            let quad = (qii + qjj + 2.0 * qij).max(CURVATURE_FLOOR);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = a[i] - a[j];
            a[i] += delta;
            a[j] += delta;
            if diff > 0.0 {
                if a[j] < 0.0 {
                    a[j] = 0.0;
                    a[i] = diff;
                }
            } else if a[i] < 0.0 {
                a[i] = 0.0;
                a[j] = -diff;
            }
            if diff > 0.0 {
                if a[i] > c {
                    a[i] = c;
                    a[j] = c - diff;
                }
            } else if a[j] > c {
                a[j] = c;
                a[i] = c + diff;
            }
        } else {
            let quad = (qii + qjj - 2.0 * qij).max(CURVATURE_FLOOR);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = a[i] + a[j];
            a[i] -= delta;
            a[j] += delta;
            if sum > c {
                if a[i] > c {
                    a[i] = c;
                    a[j] = sum - c;
                }
            } else if a[j] < 0.0 {
                a[j] = 0.0;
                a[i] = sum;
            }
            if sum > c {
                if a[j] > c {
                    a[j] = c;
                    a[i] = sum - c;
                }
            } else if a[i] < 0.0 {
                a[i] = 0.0;
                a[j] = sum;
            }
        }
        let (di, dj) = (a[i] - old_ai, a[j] - old_aj);
        for t in 0..l {
            grad[t] += q(t, i) * di + q(t, j) * dj;
        }
        if trace {
            objective_trace.push(objective(&a, &grad));
        }
    }

    // bias from free variables, else the midpoint of the feasible interval
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free_sum, mut n_free) = (0.0, 0usize);
    for t in 0..l {
        let yg = sign(t) * grad[t];
        if a[t] >= c {
            if sign(t) < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if a[t] <= 0.0 {
            if sign(t) > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            free_sum += yg;
        }
    }
    let rho = if n_free > 0 {
        free_sum / n_free as f64
    } else {
        (ub + lb) / 2.0
    };

    let beta: Vec<f64> = (0..n).map(|i| a[i] - a[i + n]).collect();
    let (support_vectors, coefficients): (Vec<Vec<f64>>, Vec<f64>) = beta
        .iter()
        .enumerate()
        .filter(|(_, b)| **b != 0.0)
        .map(|(i, b)| (x[i].clone(), *b))
        .unzip();
    let model = SvrModel {
        support_vectors,
        coefficients,
        bias: -rho,
        kernel,
        converged,
        iterations,
        dual_objective: objective(&a, &grad),
        kkt_gap: gap,
    };
    Ok(SvrSolution {
        model,
        beta,
        objective_trace,
    })
}
