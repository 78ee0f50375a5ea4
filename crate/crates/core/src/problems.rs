//! Small differentiable objectives with analytic gradients, deterministic
//! mini-batch plans, and a central-difference gradient oracle.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::vector::ParamVector;

/// Feature vectors with scalar targets. Binary tasks use targets in `{0, 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
    dim: usize,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::Empty);
        }
        if inputs.len() != targets.len() {
            return Err(Error::Dimension {
                expected: inputs.len(),
                actual: targets.len(),
            });
        }
        let dim = inputs[0].len();
        if let Some(row) = inputs.iter().find(|r| r.len() != dim) {
            return Err(Error::Dimension {
                expected: dim,
                actual: row.len(),
            });
        }
        Ok(Self { inputs, targets, dim })
    }

    /// Reads a CSV file with a header row; the last column is the target and
    /// every other column a feature.
    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let Some((_, header)) = lines.next() else {
            return Err(Error::Parse {
                path: path.into(),
                line: 1,
                msg: "missing header row".into(),
            });
        };
        let columns = header.split(',').count();
        if columns < 2 {
            return Err(Error::Parse {
                path: path.into(),
                line: 1,
                msg: "need at least one feature column and a target column".into(),
            });
        }
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for (idx, line) in lines {
            let parsed: std::result::Result<Vec<f64>, _> =
                line.split(',').map(|f| f.trim().parse::<f64>()).collect();
            let mut row = parsed.map_err(|e| Error::Parse {
                path: path.into(),
                line: idx + 1,
                msg: e.to_string(),
            })?;
            if row.len() != columns {
                return Err(Error::Parse {
                    path: path.into(),
                    line: idx + 1,
                    msg: format!("expected {columns} fields, found {}", row.len()),
                });
            }
            targets.push(row.pop().expect("at least two columns"));
            inputs.push(row);
        }
        Self::new(inputs, targets)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i]
    }

    pub fn target(&self, i: usize) -> f64 {
        self.targets[i]
    }
}

/// Generator for the sparse, noisy binary classification task on which weight
/// decay measurably improves held-out loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparseLogisticTask {
    pub dim: usize,
    pub informative: usize,
    pub train: usize,
    pub eval: usize,
    /// Magnitude of each informative teacher weight.
    pub signal: f64,
}

impl Default for SparseLogisticTask {
    fn default() -> Self {
        Self {
            dim: 20,
            informative: 5,
            train: 200,
            eval: 2000,
            signal: 1.0,
        }
    }
}

impl SparseLogisticTask {
    /// Draws `(train, eval)` datasets. Features are standard normal; labels
    /// are Bernoulli draws from a logistic teacher whose first `informative`
    /// weights are `±signal` and the rest zero.
    pub fn generate(&self, seed: u64) -> Result<(Dataset, Dataset)> {
        if self.informative > self.dim || self.dim == 0 {
            return Err(Error::InvalidHyper(format!(
                "informative dims ({}) must not exceed dim ({})",
                self.informative, self.dim
            )));
        }
        let mut rng = Rng::derive(seed, 0x7A5C);
        let teacher: Vec<f64> = (0..self.dim)
            .map(|i| {
                if i < self.informative {
                    if rng.uniform() < 0.5 { -self.signal } else { self.signal }
                } else {
                    0.0
                }
            })
            .collect();
        let mut draw = |n: usize| -> Result<Dataset> {
            let mut inputs = Vec::with_capacity(n);
            let mut targets = Vec::with_capacity(n);
            for _ in 0..n {
                let x: Vec<f64> = (0..self.dim).map(|_| rng.normal()).collect();
                let z: f64 = x.iter().zip(&teacher).map(|(a, b)| a * b).sum();
                let y = if rng.uniform() < sigmoid(z) { 1.0 } else { 0.0 };
                inputs.push(x);
                targets.push(y);
            }
            Dataset::new(inputs, targets)
        };
        let train = draw(self.train)?;
        let eval = draw(self.eval)?;
        Ok((train, eval))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Problem {
    /// `0.5 * sum_i h_i (theta_i - opt_i)^2`; has no data, so batches are
    /// ignored.
    Quadratic { curvature: ParamVector, opt: ParamVector },
    /// Binary logistic regression; parameters are the `d` weights followed by
    /// one bias.
    Logistic { data: Dataset },
    /// Fully connected tanh network with a single logit output, trained with
    /// the logistic loss. `layers` includes the input and output widths.
    Mlp { data: Dataset, layers: Vec<usize> },
}

impl Problem {
    pub fn quadratic(curvature: ParamVector, opt: ParamVector) -> Result<Self> {
        curvature.ensure_same_len(&opt)?;
        if let Some(index) = curvature.iter().position(|&h| h <= 0.0) {
            return Err(Error::Domain {
                op: "quadratic curvature",
                index,
                value: curvature[index],
            });
        }
        Ok(Problem::Quadratic { curvature, opt })
    }

    pub fn logistic(data: Dataset) -> Self {
        Problem::Logistic { data }
    }

    pub fn mlp(data: Dataset, layers: Vec<usize>) -> Result<Self> {
        if layers.len() < 2 || layers.contains(&0) {
            return Err(Error::InvalidHyper(format!("invalid layer sizes {layers:?}")));
        }
        if layers[0] != data.dim() {
            return Err(Error::Dimension {
                expected: data.dim(),
                actual: layers[0],
            });
        }
        if *layers.last().unwrap() != 1 {
            return Err(Error::InvalidHyper("MLP output width must be 1".into()));
        }
        Ok(Problem::Mlp { data, layers })
    }

    /// Same model on a different dataset (used for held-out evaluation).
    pub fn with_data(&self, data: Dataset) -> Result<Self> {
        match self {
            Problem::Quadratic { .. } => Ok(self.clone()),
            Problem::Logistic { .. } => Ok(Problem::logistic(data)),
            Problem::Mlp { layers, .. } => Problem::mlp(data, layers.clone()),
        }
    }

    /// Number of parameters.
    pub fn dim(&self) -> usize {
        match self {
            Problem::Quadratic { opt, .. } => opt.len(),
            Problem::Logistic { data } => data.dim() + 1,
            Problem::Mlp { layers, .. } => layers.windows(2).map(|w| w[1] * (w[0] + 1)).sum(),
        }
    }

    /// Number of examples a batch plan should cover (1 for the quadratic).
    pub fn num_examples(&self) -> usize {
        match self {
            Problem::Quadratic { .. } => 1,
            Problem::Logistic { data } | Problem::Mlp { data, .. } => data.len(),
        }
    }

    pub fn is_classification(&self) -> bool {
        !matches!(self, Problem::Quadratic { .. })
    }

    /// Indices of bias parameters (candidates for decay exemption).
    pub fn bias_mask(&self) -> Vec<bool> {
        match self {
            Problem::Quadratic { opt, .. } => vec![false; opt.len()],
            Problem::Logistic { data } => {
                let mut m = vec![false; data.dim() + 1];
                m[data.dim()] = true;
                m
            }
            Problem::Mlp { layers, .. } => {
                let mut m = Vec::with_capacity(self.dim());
                for w in layers.windows(2) {
                    m.extend(std::iter::repeat_n(false, w[0] * w[1]));
                    m.extend(std::iter::repeat_n(true, w[1]));
                }
                m
            }
        }
    }

    pub fn full_batch(&self) -> Vec<usize> {
        (0..self.num_examples()).collect()
    }

    fn check(&self, theta: &ParamVector, batch: &[usize]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                actual: theta.len(),
            });
        }
        if batch.is_empty() {
            return Err(Error::Empty);
        }
        Ok(())
    }

    /// Mean loss over `batch`.
    pub fn loss(&self, theta: &ParamVector, batch: &[usize]) -> Result<f64> {
        self.check(theta, batch)?;
        let th = theta.as_slice();
        let value = match self {
            Problem::Quadratic { curvature, opt } => {
                0.5 * curvature
                    .iter()
                    .zip(opt)
                    .zip(th)
                    .map(|((h, o), t)| h * (t - o) * (t - o))
                    .sum::<f64>()
            }
            Problem::Logistic { data } => {
                let d = data.dim();
                let total: f64 = batch
                    .iter()
                    .map(|&j| {
                        let z = linear(&th[..d], th[d], data.input(j));
                        logistic_loss(z, data.target(j))
                    })
                    .sum();
                total / batch.len() as f64
            }
            Problem::Mlp { data, layers } => {
                let net = MlpView::new(layers, th);
                let total: f64 = batch
                    .iter()
                    .map(|&j| {
                        let acts = net.forward(data.input(j));
                        logistic_loss(acts.last().unwrap()[0], data.target(j))
                    })
                    .sum();
                total / batch.len() as f64
            }
        };
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "loss", index: 0 });
        }
        Ok(value)
    }

    /// Analytic gradient of [`Problem::loss`].
    pub fn grad(&self, theta: &ParamVector, batch: &[usize]) -> Result<ParamVector> {
        self.check(theta, batch)?;
        let th = theta.as_slice();
        let out = match self {
            Problem::Quadratic { curvature, opt } => curvature
                .iter()
                .zip(opt)
                .zip(th)
                .map(|((h, o), t)| h * (t - o))
                .collect(),
            Problem::Logistic { data } => {
                let d = data.dim();
                let mut g = vec![0.0; d + 1];
                for &j in batch {
                    let x = data.input(j);
                    let r = sigmoid(linear(&th[..d], th[d], x)) - data.target(j);
                    for (gi, xi) in g[..d].iter_mut().zip(x) {
                        *gi += r * xi;
                    }
                    g[d] += r;
                }
                let n = batch.len() as f64;
                g.iter_mut().for_each(|v| *v /= n);
                g
            }
            Problem::Mlp { data, layers } => {
                let net = MlpView::new(layers, th);
                let mut g = vec![0.0; th.len()];
                for &j in batch {
                    net.accumulate_grad(data.input(j), data.target(j), &mut g);
                }
                let n = batch.len() as f64;
                g.iter_mut().for_each(|v| *v /= n);
                g
            }
        };
        ParamVector::from_checked("grad", out)
    }

    /// Fraction of misclassified examples in `batch` (threshold at logit 0).
    /// Non-classification problems report their loss instead.
    pub fn error_rate(&self, theta: &ParamVector, batch: &[usize]) -> Result<f64> {
        self.check(theta, batch)?;
        let th = theta.as_slice();
        let wrong = match self {
            Problem::Quadratic { .. } => return self.loss(theta, batch),
            Problem::Logistic { data } => {
                let d = data.dim();
                batch
                    .iter()
                    .filter(|&&j| misclassified(linear(&th[..d], th[d], data.input(j)), data.target(j)))
                    .count()
            }
            Problem::Mlp { data, layers } => {
                let net = MlpView::new(layers, th);
                batch
                    .iter()
                    .filter(|&&j| {
                        let acts = net.forward(data.input(j));
                        misclassified(acts.last().unwrap()[0], data.target(j))
                    })
                    .count()
            }
        };
        Ok(wrong as f64 / batch.len() as f64)
    }
}

fn misclassified(z: f64, y: f64) -> bool {
    (z > 0.0) != (y > 0.5)
}

fn linear(w: &[f64], b: f64, x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `-y log sigmoid(z) - (1 - y) log(1 - sigmoid(z))`, written as
/// `softplus(z) - y z`.
fn logistic_loss(z: f64, y: f64) -> f64 {
    let softplus = if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    };
    softplus - y * z
}

/// Borrowed view of flat MLP parameters. Layer `l` stores its weight matrix
/// row-major (`out x in`) followed by its bias vector.
struct MlpView<'a> {
    layers: &'a [usize],
    params: &'a [f64],
}

impl<'a> MlpView<'a> {
    fn new(layers: &'a [usize], params: &'a [f64]) -> Self {
        Self { layers, params }
    }

    fn offsets(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let mut offset = 0;
        self.layers.windows(2).map(move |w| {
            let start = offset;
            offset += w[1] * (w[0] + 1);
            (start, w[0], w[1])
        })
    }

    /// Activations per layer, input first; hidden layers use tanh and the
    /// output stays linear.
    fn forward(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let n_layers = self.layers.len() - 1;
        let mut acts = vec![x.to_vec()];
        for (l, (start, fan_in, fan_out)) in self.offsets().enumerate() {
            let w = &self.params[start..start + fan_in * fan_out];
            let b = &self.params[start + fan_in * fan_out..start + fan_out * (fan_in + 1)];
            let input = acts.last().unwrap();
            let out: Vec<f64> = (0..fan_out)
                .map(|o| {
                    let z = linear(&w[o * fan_in..(o + 1) * fan_in], b[o], input);
                    if l + 1 < n_layers { z.tanh() } else { z }
                })
                .collect();
            acts.push(out);
        }
        acts
    }

    fn accumulate_grad(&self, x: &[f64], y: f64, g: &mut [f64]) {
        let acts = self.forward(x);
        let offsets: Vec<_> = self.offsets().collect();
        // d loss / d (pre-activation) of the current layer
        let mut delta = vec![sigmoid(acts.last().unwrap()[0]) - y];
        for (l, &(start, fan_in, fan_out)) in offsets.iter().enumerate().rev() {
            let input = &acts[l];
            for o in 0..fan_out {
                let row = start + o * fan_in;
                for i in 0..fan_in {
                    g[row + i] += delta[o] * input[i];
                }
                g[start + fan_in * fan_out + o] += delta[o];
            }
            if l > 0 {
                let w = &self.params[start..start + fan_in * fan_out];
                delta = (0..fan_in)
                    .map(|i| {
                        let back: f64 = (0..fan_out).map(|o| w[o * fan_in + i] * delta[o]).sum();
                        back * (1.0 - input[i] * input[i])
                    })
                    .collect();
            }
        }
    }
}

/// Central-difference gradient, `(f(theta + h e_i) - f(theta - h e_i)) / 2h`.
pub fn fd_gradient(p: &Problem, theta: &ParamVector, batch: &[usize], h: f64) -> Result<ParamVector> {
    if h.is_nan() || h <= 0.0 {
        return Err(Error::InvalidHyper(format!("finite-difference step must be > 0, got {h}")));
    }
    let mut probe = theta.as_slice().to_vec();
    let mut out = Vec::with_capacity(probe.len());
    for i in 0..probe.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = p.loss(&ParamVector::new(probe.clone())?, batch)?;
        probe[i] = orig - h;
        let minus = p.loss(&ParamVector::new(probe.clone())?, batch)?;
        probe[i] = orig;
        out.push((plus - minus) / (2.0 * h));
    }
    ParamVector::new(out)
}

/// Epoch-major, seeded mini-batch order. Each epoch is an independent
/// permutation of `0..n` cut into consecutive batches of `batch_size` (the
/// last batch may be short).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchPlan {
    pub n: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl BatchPlan {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if n == 0 || batch_size == 0 {
            return Err(Error::InvalidHyper("batch plan needs n > 0 and batch size > 0".into()));
        }
        Ok(Self {
            n,
            batch_size: batch_size.min(n),
            seed,
        })
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.n.div_ceil(self.batch_size)
    }

    pub fn epoch_order(&self, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.n).collect();
        Rng::derive(self.seed, epoch).shuffle(&mut order);
        order
    }

    pub fn epoch_batches(&self, epoch: u64) -> Vec<Vec<usize>> {
        self.epoch_order(epoch)
            .chunks(self.batch_size)
            .map(<[usize]>::to_vec)
            .collect()
    }
}
