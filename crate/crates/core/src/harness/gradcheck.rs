//! Finite-difference audit of every differentiable primitive, of model
//! parameter gradients and of the gradient with respect to λ.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{OpKind, Tape, Var};
use crate::error::Result;
use crate::mixup::{mixup_loss, rand_op_with};
use crate::models::{Batch, Hidden, Layer, Model};
use crate::tensor::Tensor;

/// Central-difference step.
pub const STEP: f64 = 1e-6;
/// Tolerance for finite-difference comparisons.
pub const FD_TOL: f64 = 1e-4;
/// Tolerance for the closed-form λ decomposition.
pub const DECOMP_TOL: f64 = 1e-6;
/// Gradients below this magnitude are compared absolutely.
pub const FLOOR: f64 = 1e-5;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FLOOR)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckEntry {
    pub name: String,
    pub instances: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl CheckEntry {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradcheckReport {
    pub entries: Vec<CheckEntry>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(CheckEntry::passed)
    }

    pub fn entry(&self, name: &str) -> Option<&CheckEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.entries.iter().filter(|e| !e.passed()).map(|e| e.name.as_str()).collect()
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<24} {:>9} {:>12} {:>9}  status", "check", "instances", "max_rel_err", "tol")?;
        for e in &self.entries {
            writeln!(
                f,
                "{:<24} {:>9} {:>12.3e} {:>9.0e}  {}",
                e.name,
                e.instances,
                e.max_rel_err,
                e.tolerance,
                if e.passed() { "ok" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

type OpFn = dyn Fn(&mut Tape, &[Var]) -> Result<Var>;

/// Max relative error of the tape gradient of `sum(op(inputs) * w)` with
/// respect to every input element.
fn check_op(inputs: &[Tensor], op: &OpFn, fault: Option<OpKind>, rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut tape = Tape::new();
    tape.inject_sign_fault(fault);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = op(&mut tape, &vars)?;
    let weights = Tensor::uniform(tape.value(out).shape(), 1.0, rng);
    let scalarize = |tape: &mut Tape, out: Var| -> Result<Var> {
        let w = tape.constant(weights.clone());
        let prod = tape.mul(out, w)?;
        Ok(tape.sum(prod))
    };
    let root = scalarize(&mut tape, out)?;
    tape.backward(root)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).map_or(vec![0.0; t.len()], |g| g.data().to_vec()))
        .collect();

    let eval = |point: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = point.iter().map(|p| t.leaf(p.clone())).collect();
        let out = op(&mut t, &vs)?;
        let root = scalarize(&mut t, out)?;
        Ok(t.value(root).data()[0])
    };
    let mut worst = 0.0f64;
    for k in 0..inputs.len() {
        for e in 0..inputs[k].len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[e] += STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[e] -= STEP;
            let fd = (eval(&plus)? - eval(&minus)?) / (2.0 * STEP);
            worst = worst.max(rel_err(fd, analytic[k][e]));
        }
    }
    Ok(worst)
}

fn u(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape, 1.0, rng)
}

/// Random inputs for one instance of `kind` and the op under test.
fn op_instance(kind: OpKind, rng: &mut ChaCha8Rng) -> (Vec<Tensor>, Box<OpFn>) {
    let n = rng.random_range(1..4);
    let m = rng.random_range(1..4);
    let k = rng.random_range(1..4);
    match kind {
        OpKind::MatMul => (vec![u(&[n, k], rng), u(&[k, m], rng)], Box::new(|t, v| t.matmul(v[0], v[1]))),
        OpKind::Add => (vec![u(&[n, m], rng), u(&[n, m], rng)], Box::new(|t, v| t.add(v[0], v[1]))),
        OpKind::AddRow => (vec![u(&[n, m], rng), u(&[m], rng)], Box::new(|t, v| t.add_row(v[0], v[1]))),
        OpKind::Scale => {
            let c = rng.random_range(-2.0..2.0);
            (vec![u(&[n, m], rng)], Box::new(move |t, v| Ok(t.scale(v[0], c))))
        }
        OpKind::Mul => (vec![u(&[n, m], rng), u(&[n, m], rng)], Box::new(|t, v| t.mul(v[0], v[1]))),
        OpKind::Relu => (vec![u(&[n, m], rng)], Box::new(|t, v| Ok(t.relu(v[0])))),
        OpKind::Tanh => (vec![u(&[n, m], rng)], Box::new(|t, v| Ok(t.tanh(v[0])))),
        OpKind::Embedding => {
            let vocab = rng.random_range(2..6);
            let ids: Vec<usize> = (0..rng.random_range(1..6)).map(|_| rng.random_range(0..vocab)).collect();
            (vec![u(&[vocab, m], rng)], Box::new(move |t, v| t.embedding_lookup(v[0], &ids)))
        }
        OpKind::MeanPool => {
            let len = rng.random_range(1..5);
            let lens: Vec<usize> = (0..n).map(|_| rng.random_range(1..=len)).collect();
            (vec![u(&[n, len, m], rng)], Box::new(move |t, v| t.mean_pool_batch(v[0], &lens)))
        }
        OpKind::Conv1dMaxPool => {
            let w = rng.random_range(1..3);
            let len = w + rng.random_range(0..4);
            (
                vec![u(&[n, len, k], rng), u(&[w, k, m], rng), u(&[m], rng)],
                Box::new(|t, v| t.conv1d_maxpool_batch(v[0], v[1], v[2])),
            )
        }
        OpKind::Concat => (vec![u(&[n, m], rng), u(&[n, k], rng)], Box::new(|t, v| t.concat(&[v[0], v[1]]))),
        OpKind::GatherRows => {
            let index: Vec<usize> = (0..rng.random_range(1..6)).map(|_| rng.random_range(0..n)).collect();
            (vec![u(&[n, m], rng)], Box::new(move |t, v| t.gather_rows(v[0], &index)))
        }
        OpKind::Lerp => {
            let mut w = u(&[n], rng);
            w.data_mut().iter_mut().for_each(|x| *x = x.abs());
            (vec![u(&[n, m, k], rng), u(&[n, m, k], rng), w], Box::new(|t, v| t.lerp(v[0], v[1], v[2])))
        }
        OpKind::SoftmaxCrossEntropy => {
            let c = rng.random_range(2..5);
            let mut target = u(&[n, c], rng);
            target.data_mut().iter_mut().for_each(|x| *x = x.abs());
            (
                vec![Tensor::uniform(&[n, c], 3.0, rng)],
                Box::new(move |t, v| t.softmax_cross_entropy(v[0], &target)),
            )
        }
        OpKind::Select => {
            let mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
            (vec![u(&[n], rng), u(&[n], rng)], Box::new(move |t, v| t.select(v[0], v[1], &mask)))
        }
        OpKind::Sum => (vec![u(&[n, m], rng)], Box::new(|t, v| Ok(t.sum(v[0])))),
        OpKind::Mean => (vec![u(&[n, m], rng)], Box::new(|t, v| t.mean(v[0]))),
        OpKind::Reshape => (vec![u(&[n, m], rng)], Box::new(move |t, v| t.reshape(v[0], vec![m, n]))),
        OpKind::Leaf | OpKind::Constant => (vec![u(&[n], rng)], Box::new(|_, v| Ok(v[0]))),
    }
}

pub const CHECKED_OPS: [OpKind; 18] = [
    OpKind::MatMul,
    OpKind::Add,
    OpKind::AddRow,
    OpKind::Scale,
    OpKind::Mul,
    OpKind::Relu,
    OpKind::Tanh,
    OpKind::Embedding,
    OpKind::MeanPool,
    OpKind::Conv1dMaxPool,
    OpKind::Concat,
    OpKind::GatherRows,
    OpKind::Lerp,
    OpKind::SoftmaxCrossEntropy,
    OpKind::Select,
    OpKind::Sum,
    OpKind::Mean,
    OpKind::Reshape,
];

/// 100 random instances per primitive.
pub fn op_suite(instances: usize, fault: Option<OpKind>, seed: u64) -> Result<Vec<CheckEntry>> {
    CHECKED_OPS
        .iter()
        .enumerate()
        .map(|(i, &kind)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed + i as u64);
            let mut worst = 0.0f64;
            for _ in 0..instances {
                let (inputs, op) = op_instance(kind, &mut rng);
                worst = worst.max(check_op(&inputs, op.as_ref(), fault, &mut rng)?);
            }
            Ok(CheckEntry {
                name: kind.name().to_string(),
                instances,
                max_rel_err: worst,
                tolerance: FD_TOL,
            })
        })
        .collect()
}

/// A random mixing problem: model, batch, pairing, λ, layer and optional
/// dropout mask.
#[derive(Clone, Debug)]
pub struct LambdaInstance {
    pub model: Model,
    pub batch: Batch,
    pub perm: Vec<usize>,
    pub lambda: Vec<f64>,
    pub layer: Layer,
    pub dropout: Option<Tensor>,
}

impl LambdaInstance {
    pub fn random(rng: &mut ChaCha8Rng) -> Result<Self> {
        let vocab = rng.random_range(5..12);
        let d = rng.random_range(2..5);
        let c = rng.random_range(2..4);
        let max_len = rng.random_range(3..7);
        let model = if rng.random_bool(0.5) {
            Model::init_embed_mlp(vocab, d, rng.random_range(2..6), c, rng)?
        } else {
            let widths: Vec<usize> = (0..rng.random_range(1..3)).map(|_| rng.random_range(1..=3)).collect();
            let dropout = if rng.random_bool(0.5) { 0.3 } else { 0.0 };
            Model::init_text_cnn(vocab, d, &widths, rng.random_range(1..4), c, dropout, max_len, rng)?
        };
        let n = rng.random_range(2..6);
        let mut ids = vec![0; n * max_len];
        let mut lens = Vec::with_capacity(n);
        let mut labels = Tensor::zeros(&[n, c]);
        for s in 0..n {
            let len = rng.random_range(1..=max_len);
            for t in 0..len {
                ids[s * max_len + t] = rng.random_range(1..vocab);
            }
            lens.push(len);
            labels.data_mut()[s * c + rng.random_range(0..c)] = 1.0;
        }
        let batch = Batch::new(ids, max_len, lens, labels)?;
        let perm = crate::mixup::pair_batch(n, rng);
        let lambda = (0..n).map(|_| rng.random_range(0.01..0.99)).collect();
        let layer = if rng.random_bool(0.5) { Layer::Word } else { Layer::Sent };
        let dropout = model.sample_dropout_mask(n, rng);
        Ok(Self {
            model,
            batch,
            perm,
            lambda,
            layer,
            dropout,
        })
    }

    /// Per-sample mixed loss at `lambda`.
    pub fn losses(&self, lambda: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = self.model.bind(&mut tape);
        let out = rand_op_with(
            &self.model,
            &mut tape,
            &bound,
            &self.batch,
            self.layer,
            self.perm.clone(),
            lambda.to_vec(),
            self.dropout.as_ref(),
        )?;
        Ok(tape.value(out.loss).data().to_vec())
    }

    /// `∂ΣL/∂λ` from the tape.
    pub fn tape_grad(&self, fault: Option<OpKind>) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        tape.inject_sign_fault(fault);
        let bound = self.model.bind(&mut tape);
        let out = rand_op_with(
            &self.model,
            &mut tape,
            &bound,
            &self.batch,
            self.layer,
            self.perm.clone(),
            self.lambda.clone(),
            self.dropout.as_ref(),
        )?;
        let s = tape.sum(out.loss);
        crate::amp::grad_lambda(&mut tape, s, out.mix.lambda_var)
    }

    /// Central differences of `L_s` in `λ_s`.
    pub fn fd_grad(&self, h: f64) -> Result<Vec<f64>> {
        (0..self.lambda.len())
            .map(|s| {
                let mut plus = self.lambda.clone();
                plus[s] += h;
                let mut minus = self.lambda.clone();
                minus[s] -= h;
                Ok((self.losses(&plus)?[s] - self.losses(&minus)?[s]) / (2.0 * h))
            })
            .collect()
    }

    /// `ce_i - ce_j + (∂L/∂ĝ) · (g_i - g_j)`, with `∂L/∂ĝ` taken on a tape
    /// where the mixed hidden state is itself a leaf.
    pub fn decomposition(&self) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = self.model.bind(&mut tape);
        let h = self.model.forward_to_layer(&mut tape, &bound, &self.batch, self.layer)?;
        let g = tape.value(h.var).clone();
        let width = g.len() / self.batch.len();
        let gj: Vec<f64> = self.perm.iter().flat_map(|&j| g.data()[j * width..(j + 1) * width].to_vec()).collect();
        let mixed: Vec<f64> = g
            .data()
            .iter()
            .zip(&gj)
            .enumerate()
            .map(|(e, (a, b))| {
                let lam = self.lambda[e / width];
                a * lam + b * (1.0 - lam)
            })
            .collect();

        let mut t2 = Tape::new();
        let bound2 = self.model.bind(&mut t2);
        let g_hat = t2.leaf(Tensor::new(g.shape().to_vec(), mixed)?);
        let lens: Vec<usize> = self
            .perm
            .iter()
            .enumerate()
            .map(|(i, &j)| h.valid_lens[i].max(h.valid_lens[j]))
            .collect();
        let hidden = Hidden {
            var: g_hat,
            valid_lens: lens,
        };
        let logits = self.model.forward_from_layer(&mut t2, &bound2, &hidden, self.layer, self.dropout.as_ref())?;
        let y_i = self.batch.labels().clone();
        let y_j = crate::mixup::gather_label_rows(&y_i, &self.perm);
        let ce_i = t2.softmax_cross_entropy(logits, &y_i)?;
        let ce_j = t2.softmax_cross_entropy(logits, &y_j)?;
        let lam = t2.constant(Tensor::vector(self.lambda.clone()));
        let loss = mixup_loss(&mut t2, logits, &y_i, &y_j, lam)?;
        let total = t2.sum(loss);
        t2.backward(total)?;
        let dg = t2.grad(g_hat).expect("hidden leaf reaches the loss").data().to_vec();
        let (ci, cj) = (t2.value(ce_i).data(), t2.value(ce_j).data());
        Ok((0..self.batch.len())
            .map(|s| {
                let dot: f64 = (s * width..(s + 1) * width).map(|e| dg[e] * (g.data()[e] - gj[e])).sum();
                ci[s] - cj[s] + dot
            })
            .collect())
    }
}

/// `∂L/∂λ` against finite differences and against the decomposition.
pub fn lambda_suite(instances: usize, fault: Option<OpKind>, seed: u64) -> Result<Vec<CheckEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut fd_worst, mut dec_worst) = (0.0f64, 0.0f64);
    for _ in 0..instances {
        let inst = LambdaInstance::random(&mut rng)?;
        let g = inst.tape_grad(fault)?;
        let fd = inst.fd_grad(STEP)?;
        let dec = inst.decomposition()?;
        for s in 0..g.len() {
            fd_worst = fd_worst.max(rel_err(fd[s], g[s]));
            dec_worst = dec_worst.max(rel_err(dec[s], g[s]));
        }
    }
    Ok(vec![
        CheckEntry {
            name: "dL/dlambda (fd)".into(),
            instances,
            max_rel_err: fd_worst,
            tolerance: FD_TOL,
        },
        CheckEntry {
            name: "dL/dlambda (decomposed)".into(),
            instances,
            max_rel_err: dec_worst,
            tolerance: DECOMP_TOL,
        },
    ])
}

/// Parameter gradients of the mean mixed loss on tiny random models.
pub fn param_suite(instances: usize, fault: Option<OpKind>, seed: u64) -> Result<CheckEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let inst = LambdaInstance::random(&mut rng)?;
        let objective = |model: &Model, tape: &mut Tape| -> Result<(Var, Vec<Var>)> {
            let bound = model.bind(tape);
            let out = rand_op_with(
                model,
                tape,
                &bound,
                &inst.batch,
                inst.layer,
                inst.perm.clone(),
                inst.lambda.clone(),
                inst.dropout.as_ref(),
            )?;
            Ok((tape.mean(out.loss)?, bound.vars().to_vec()))
        };
        let mut tape = Tape::new();
        tape.inject_sign_fault(fault);
        let (root, vars) = objective(&inst.model, &mut tape)?;
        tape.backward(root)?;
        let analytic: Vec<Option<Tensor>> = vars.iter().map(|&v| tape.grad(v).cloned()).collect();
        let value_at = |model: &Model| -> Result<f64> {
            let mut t = Tape::new();
            let (r, _) = objective(model, &mut t)?;
            Ok(t.value(r).data()[0])
        };
        for (p, grad) in analytic.iter().enumerate() {
            for e in 0..inst.model.params()[p].value.len() {
                let mut plus = inst.model.clone();
                plus.params_mut()[p].value.data_mut()[e] += STEP;
                let mut minus = inst.model.clone();
                minus.params_mut()[p].value.data_mut()[e] -= STEP;
                let fd = (value_at(&plus)? - value_at(&minus)?) / (2.0 * STEP);
                let g = grad.as_ref().map_or(0.0, |g| g.data()[e]);
                worst = worst.max(rel_err(fd, g));
            }
        }
    }
    Ok(CheckEntry {
        name: "model parameters".into(),
        instances,
        max_rel_err: worst,
        tolerance: FD_TOL,
    })
}

/// Every suite. `fault` negates the adjoints of one primitive.
pub fn gradcheck(fault: Option<OpKind>) -> Result<GradcheckReport> {
    let mut entries = op_suite(100, fault, 0)?;
    entries.extend(lambda_suite(100, fault, 1000)?);
    entries.push(param_suite(20, fault, 2000)?);
    Ok(GradcheckReport { entries })
}
