//! Linear classifiers: L2-regularized squared-hinge SVM trained by dual
//! coordinate descent, L2-regularized logistic regression, and weight
//! sparsification.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::scalar::{sigmoid, Real};

const MAGIC: &[u8; 4] = b"ECLM";
const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinearKind {
    L2Svm,
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    /// SVM cost `C`, or the logistic L2 strength.
    pub regularization: f64,
    pub iterations: usize,
    pub objective: f64,
    pub converged: bool,
}

/// Sparse weight vector plus bias. Entries are sorted by feature index.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel<T> {
    dim: usize,
    weights: Vec<(u32, T)>,
    bias: T,
    kind: LinearKind,
    meta: TrainMeta,
}

impl<T: Real> LinearModel<T> {
    /// Builds from dense weights, dropping exact zeros.
    pub fn from_dense(weights: &[T], bias: T, kind: LinearKind, meta: TrainMeta) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite()) || !bias.is_finite() {
            return Err(Error::NonFinite {
                what: "in linear model weights".into(),
            });
        }
        Ok(LinearModel {
            dim: weights.len(),
            weights: weights
                .iter()
                .enumerate()
                .filter(|(_, w)| **w != T::zero())
                .map(|(i, &w)| (i as u32, w))
                .collect(),
            bias,
            kind,
            meta,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bias(&self) -> T {
        self.bias
    }

    pub fn kind(&self) -> LinearKind {
        self.kind
    }

    pub fn meta(&self) -> &TrainMeta {
        &self.meta
    }

    pub fn weights(&self) -> &[(u32, T)] {
        &self.weights
    }

    pub fn nnz(&self) -> usize {
        self.weights.len()
    }

    pub fn dense_weights(&self) -> Vec<T> {
        let mut w = vec![T::zero(); self.dim];
        for &(i, v) in &self.weights {
            w[i as usize] = v;
        }
        w
    }

    /// `w·x + b`.
    pub fn decision(&self, x: &[T]) -> Result<T> {
        if x.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(self
            .weights
            .iter()
            .fold(self.bias, |acc, &(i, w)| acc + w * x[i as usize]))
    }

    /// `σ(w·x + b)`.
    pub fn probability(&self, x: &[T]) -> Result<T> {
        self.decision(x).map(sigmoid)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(MAGIC, VERSION);
        self.write(&mut w);
        w.finish()
    }

    pub(crate) fn write(&self, w: &mut Writer) {
        w.u8(T::WIDTH);
        w.u8(match self.kind {
            LinearKind::L2Svm => 0,
            LinearKind::Logistic => 1,
        });
        w.u32(self.dim as u32);
        w.real(self.bias);
        w.f64(self.meta.regularization);
        w.u64(self.meta.iterations as u64);
        w.f64(self.meta.objective);
        w.u8(u8::from(self.meta.converged));
        w.u64(self.weights.len() as u64);
        for &(i, v) in &self.weights {
            w.u32(i);
            w.real(v);
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, MAGIC, VERSION)?;
        let m = Self::read(&mut r)?;
        r.finish()?;
        Ok(m)
    }

    pub(crate) fn read(r: &mut Reader<'_>) -> Result<Self> {
        r.expect_width::<T>()?;
        let kind = match r.u8()? {
            0 => LinearKind::L2Svm,
            1 => LinearKind::Logistic,
            x => return Err(Error::Corrupt(format!("unknown linear model kind {x}"))),
        };
        let dim = r.u32()? as usize;
        let bias: T = r.real()?;
        let meta = TrainMeta {
            regularization: r.f64()?,
            iterations: r.u64()? as usize,
            objective: r.f64()?,
            converged: r.u8()? != 0,
        };
        let n = r.len()?;
        let mut weights = Vec::with_capacity(n.min(1 << 20));
        let mut last = None;
        for _ in 0..n {
            let i = r.u32()?;
            let v: T = r.real()?;
            if i as usize >= dim || last.is_some_and(|l| l >= i) || !v.is_finite() {
                return Err(Error::Corrupt(format!("invalid sparse weight entry {i}")));
            }
            last = Some(i);
            weights.push((i, v));
        }
        if !bias.is_finite() {
            return Err(Error::Corrupt("non-finite bias".into()));
        }
        Ok(LinearModel {
            dim,
            weights,
            bias,
            kind,
            meta,
        })
    }
}

/// Removes weights with `|w| < f`. The bias is kept.
pub fn sparsify<T: Real>(model: &LinearModel<T>, f: T) -> LinearModel<T> {
    let mut out = model.clone();
    out.weights.retain(|&(_, w)| w.abs() >= f && w != T::zero());
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub c: f64,
    pub max_iter: usize,
    /// Stop once the largest projected-gradient magnitude falls below this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            c: 1.0,
            max_iter: 1200,
            tol: 0.1,
            seed: 0,
        }
    }
}

fn check_rows<T: Real>(rows: &[&[T]], dim: usize, what: &str) -> Result<()> {
    for r in rows {
        if r.len() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                got: r.len(),
            });
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("feature among {what}"),
            });
        }
    }
    Ok(())
}

/// Primal squared-hinge objective `½‖w‖² + C Σ max(0, 1 − y(w·x+b))²`
/// with the bias treated as the weight of a constant feature.
pub fn l2svm_primal<T: Real>(w: &[T], bias: T, positives: &[&[T]], negatives: &[&[T]], c: f64) -> f64 {
    let reg: f64 = w.iter().map(|v| v.to_f64_lossy().powi(2)).sum::<f64>() + bias.to_f64_lossy().powi(2);
    let mut loss = 0.0;
    for (rows, y) in [(positives, 1.0), (negatives, -1.0)] {
        for x in rows {
            let z: f64 = w
                .iter()
                .zip(x.iter())
                .map(|(a, b)| a.to_f64_lossy() * b.to_f64_lossy())
                .sum::<f64>()
                + bias.to_f64_lossy();
            let margin = (1.0 - y * z).max(0.0);
            loss += margin * margin;
        }
    }
    0.5 * reg + c * loss
}

/// Trains a squared-hinge SVM. Returns the model and the dual objective
/// after every sweep.
pub fn train_l2svm_traced<T: Real>(
    positives: &[&[T]],
    negatives: &[&[T]],
    params: &SvmParams,
) -> Result<(LinearModel<T>, Vec<f64>)> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::invalid(
            "squared-hinge SVM needs both positive and negative examples",
        ));
    }
    if params.c <= 0.0 {
        return Err(Error::invalid("SVM cost C must be positive"));
    }
    let dim = positives[0].len();
    check_rows(positives, dim, "positives")?;
    check_rows(negatives, dim, "negatives")?;

    let rows: Vec<(&[T], f64)> = positives
        .iter()
        .map(|x| (*x, 1.0))
        .chain(negatives.iter().map(|x| (*x, -1.0)))
        .collect();
    let n = rows.len();
    let diag = 0.5 / params.c;
    // work in f64 with the bias as an extra coordinate
    let mut w = vec![0.0f64; dim + 1];
    let mut alpha = vec![0.0f64; n];
    let qd: Vec<f64> = rows
        .iter()
        .map(|(x, _)| x.iter().map(|v| v.to_f64_lossy().powi(2)).sum::<f64>() + 1.0 + diag)
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut sweeps = 0;

    let dual = |w: &[f64], alpha: &[f64]| {
        0.5 * w.iter().map(|v| v * v).sum::<f64>() + diag * 0.5 * alpha.iter().map(|a| a * a).sum::<f64>()
            - alpha.iter().sum::<f64>()
    };

    while sweeps < params.max_iter {
        sweeps += 1;
        order.shuffle(&mut rng);
        let mut max_violation = 0.0f64;
        for &i in &order {
            let (x, y) = rows[i];
            let wx: f64 = x.iter().zip(&w).map(|(a, b)| a.to_f64_lossy() * b).sum::<f64>() + w[dim];
            let g = y * wx - 1.0 + diag * alpha[i];
            let pg = if alpha[i] == 0.0 { g.min(0.0) } else { g };
            max_violation = max_violation.max(pg.abs());
            if pg.abs() > 1e-12 {
                let old = alpha[i];
                alpha[i] = (old - g / qd[i]).max(0.0);
                let step = (alpha[i] - old) * y;
                for (wj, xj) in w.iter_mut().zip(x.iter()) {
                    *wj += step * xj.to_f64_lossy();
                }
                w[dim] += step;
            }
        }
        trace.push(dual(&w, &alpha));
        if max_violation < params.tol {
            converged = true;
            break;
        }
    }
    let weights: Vec<T> = w[..dim].iter().map(|&v| T::from_f64_lossy(v)).collect();
    let bias = T::from_f64_lossy(w[dim]);
    let objective = l2svm_primal(&weights, bias, positives, negatives, params.c);
    let model = LinearModel::from_dense(
        &weights,
        bias,
        LinearKind::L2Svm,
        TrainMeta {
            regularization: params.c,
            iterations: sweeps,
            objective,
            converged,
        },
    )?;
    Ok((model, trace))
}

pub fn train_l2svm<T: Real>(positives: &[&[T]], negatives: &[&[T]], params: &SvmParams) -> Result<LinearModel<T>> {
    train_l2svm_traced(positives, negatives, params).map(|(m, _)| m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticParams {
    pub l2: f64,
    pub max_iter: usize,
    /// Gradient-norm convergence threshold.
    pub tol: f64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        LogisticParams {
            l2: 1e-3,
            max_iter: 5000,
            tol: 1e-6,
        }
    }
}

/// Mean negative log-likelihood plus `(l2/2)‖w‖²` (bias unregularized),
/// with its gradient. The last gradient entry is the bias component.
pub fn logistic_objective<T: Real>(x: &[&[T]], y: &[bool], l2: f64, w: &[f64], bias: f64) -> (f64, Vec<f64>) {
    let n = x.len().max(1) as f64;
    let mut f = 0.0;
    let mut grad = vec![0.0; w.len() + 1];
    for (row, &label) in x.iter().zip(y) {
        let z: f64 = row.iter().zip(w).map(|(a, b)| a.to_f64_lossy() * b).sum::<f64>() + bias;
        let t = if label { 1.0 } else { 0.0 };
        // log(1 + e^z) - t z, computed stably
        f += if z > 0.0 {
            z + (-z).exp().ln_1p()
        } else {
            z.exp().ln_1p()
        } - t * z;
        let r = sigmoid(z) - t;
        for (g, a) in grad.iter_mut().zip(row.iter()) {
            *g += r * a.to_f64_lossy();
        }
        grad[w.len()] += r;
    }
    f /= n;
    for g in &mut grad {
        *g /= n;
    }
    f += 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>();
    for (g, v) in grad.iter_mut().zip(w) {
        *g += l2 * v;
    }
    (f, grad)
}

/// Gradient descent with Armijo backtracking on [`logistic_objective`].
pub fn train_logistic<T: Real>(x: &[&[T]], y: &[bool], params: &LogisticParams) -> Result<LinearModel<T>> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::invalid("logistic regression needs one label per non-empty row"));
    }
    let dim = x[0].len();
    check_rows(x, dim, "rows")?;
    let mut w = vec![0.0f64; dim];
    let mut b = 0.0f64;
    let (mut f, mut g) = logistic_objective(x, y, params.l2, &w, b);
    let mut iterations = 0;
    let mut converged = false;
    let mut step = 1.0f64;
    while iterations < params.max_iter {
        let gnorm2: f64 = g.iter().map(|v| v * v).sum();
        if gnorm2.sqrt() < params.tol {
            converged = true;
            break;
        }
        iterations += 1;
        step = (step * 2.0).min(1e6);
        loop {
            let w_new: Vec<f64> = w.iter().zip(&g).map(|(a, d)| a - step * d).collect();
            let b_new = b - step * g[dim];
            let (f_new, g_new) = logistic_objective(x, y, params.l2, &w_new, b_new);
            if f_new <= f - 0.5 * step * gnorm2 || step < 1e-20 {
                w = w_new;
                b = b_new;
                f = f_new;
                g = g_new;
                break;
            }
            step *= 0.5;
        }
    }
    if !converged && g.iter().map(|v| v * v).sum::<f64>().sqrt() < params.tol {
        converged = true;
    }
    let weights: Vec<T> = w.iter().map(|&v| T::from_f64_lossy(v)).collect();
    LinearModel::from_dense(
        &weights,
        T::from_f64_lossy(b),
        LinearKind::Logistic,
        TrainMeta {
            regularization: params.l2,
            iterations,
            objective: f,
            converged,
        },
    )
}
