//! Training objectives and loops for circuit autoencoders, the VAE
//! baseline, and data-free distillation from a VAE teacher.

mod optim;

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Array, Tape, Var};
use crate::circuit::Circuit;
use crate::data::{sample_batch, DataKind, Dataset};
use crate::error::{Error, Result};
use crate::inference::{self, log_marginal, sample_joint, CircuitVars, Embeddings, Evidence};
use crate::model::Apc;
use crate::nn::{gaussian_kld, Decoder, Vae};
use crate::scalar::Scalar;

pub use optim::{AdamW, AdamWConfig, Schedule};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub rec: f64,
    pub kld: f64,
    pub nll: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            rec: 1.0,
            kld: 1.0,
            nll: 1.0,
        }
    }
}

/// How squared reconstruction errors enter the objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecReduction {
    /// Summed over data dimensions and averaged over rows: the negative
    /// log-likelihood of a fixed-variance Gaussian decoder up to a constant.
    #[default]
    PerSample,
    /// Averaged over every entry.
    PerEntry,
}

/// Weights and switches shaping the per-batch objective.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Objective {
    pub weights: LossWeights,
    pub reduction: RecReduction,
    /// Stops gradients from the reconstruction term at the embeddings.
    pub detach: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr_circuit: f64,
    pub lr_neural: f64,
    /// Decoupled weight decay on neural parameters; circuit parameters are
    /// never decayed.
    pub weight_decay: f64,
    pub seed: u64,
    pub loss_weights: LossWeights,
    pub reconstruction: RecReduction,
    pub adam: AdamWConfig,
    /// Stops gradients from the reconstruction term at the embeddings.
    pub detach_embeddings: bool,
    /// Fraction of training inputs dropped completely at random each step.
    pub train_missing: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            batch_size: 512,
            lr_circuit: 0.1,
            lr_neural: 0.005,
            weight_decay: 0.01,
            seed: 0,
            loss_weights: LossWeights::default(),
            reconstruction: RecReduction::default(),
            adam: AdamWConfig::default(),
            detach_embeddings: false,
            train_missing: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn objective(&self) -> Objective {
        Objective {
            weights: self.loss_weights,
            reduction: self.reconstruction,
            detach: self.detach_embeddings,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.loss_weights;
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(w.rec >= 0.0 && w.kld >= 0.0 && w.nll >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.train_missing) {
            return Err(Error::Config("train_missing must lie in [0, 1]".into()));
        }
        if !(self.lr_circuit >= 0.0 && self.lr_neural >= 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::Config(
                "learning rates and weight decay must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// One line of the metrics log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    /// Scheduled multiplier times the neural learning rate.
    pub lr: f64,
    /// Mean squared error per observed entry.
    pub rec: f64,
    pub kld: f64,
    pub nll: f64,
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub metrics: Vec<StepMetrics>,
    /// Steps skipped because the teacher produced non-finite samples.
    pub skipped: usize,
}

/// Mean squared error over the entries where `mask` is true (all entries
/// when `mask` is `None`). Values of `target` at masked-out entries are
/// ignored.
pub fn loss_rec<'t, T: Scalar>(pred: Var<'t, T>, target: &[T], mask: Option<&[bool]>) -> Result<Var<'t, T>> {
    let tape = pred.tape();
    let shape = pred.shape();
    if target.len() != pred.len() || mask.is_some_and(|m| m.len() != pred.len()) {
        return Err(Error::ShapeMismatch {
            op: "loss_rec",
            lhs: shape,
            rhs: vec![target.len()],
        });
    }
    let Some(mask) = mask else {
        let t = tape.constant(Array::new(shape, target.to_vec())?);
        return pred.sub(t)?.square().mean(None);
    };
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Ok(tape.scalar(T::zero()));
    }
    let w = T::one() / T::from_usize_lossy(count);
    let weights: Vec<T> = mask.iter().map(|&m| if m { w } else { T::zero() }).collect();
    let t = tape.constant(Array::new(shape.clone(), target_with_mask(target, mask))?);
    let sq = pred.sub(t)?.square();
    Ok(sq.mul(tape.constant(Array::new(shape, weights)?))?.sum_all())
}

fn target_with_mask<T: Scalar>(target: &[T], mask: &[bool]) -> Vec<T> {
    target
        .iter()
        .zip(mask)
        .map(|(&t, &m)| if m { t } else { T::zero() })
        .collect()
}

/// Closed-form Gaussian KL divergence to `N(0, 1)`, summed over embedding
/// dimensions and averaged over rows. Inputs are `[rows, dims]`.
pub fn loss_kld<'t, T: Scalar>(mean: Var<'t, T>, log_std: Var<'t, T>) -> Result<Var<'t, T>> {
    let rows = mean.shape().first().copied().unwrap_or(1).max(1);
    Ok(gaussian_kld(mean, log_std)?
        .sum_all()
        .mul_scalar(T::one() / T::from_usize_lossy(rows)))
}

/// `-(1/B) sum_i log p(x_i, z_i)`.
pub fn loss_nll<'t, T: Scalar>(
    c: &Circuit<T>,
    vars: &CircuitVars<'t, T>,
    e: &Evidence<T>,
    z: Embeddings<'_, 't, T>,
) -> Result<Var<'t, T>> {
    Ok(log_marginal(c, vars, e, z)?.mean(None)?.neg())
}

/// The three loss components and their weighted sum for one batch.
pub struct Losses<'t, T: Scalar> {
    /// Mean squared error per observed entry.
    pub rec: Var<'t, T>,
    /// Factor turning `rec` into the objective's reconstruction term.
    pub rec_scale: f64,
    pub kld: Var<'t, T>,
    pub nll: Var<'t, T>,
    pub total: Var<'t, T>,
}

impl<T: Scalar> Losses<'_, T> {
    fn values(&self) -> [f64; 4] {
        [
            self.rec.item().f64(),
            self.kld.item().f64(),
            self.nll.item().f64(),
            self.total.item().f64(),
        ]
    }
}

/// Observed entries per row when summing over dimensions, otherwise one.
fn rec_scale(reduction: RecReduction, rows: usize, cols: usize, mask: Option<&[bool]>) -> f64 {
    match reduction {
        RecReduction::PerEntry => 1.0,
        RecReduction::PerSample => {
            let observed = mask.map_or(rows * cols, |m| m.iter().filter(|&&v| v).count());
            observed as f64 / rows.max(1) as f64
        }
    }
}

fn weighted_total<'t, T: Scalar>(parts: [(Var<'t, T>, f64); 3]) -> Result<Var<'t, T>> {
    let mut total: Option<Var<'t, T>> = None;
    for (v, w) in parts {
        if w == 0.0 {
            continue;
        }
        let term = v.mul_scalar(T::c(w));
        total = Some(match total {
            Some(t) => t.add(term)?,
            None => term,
        });
    }
    Ok(total.unwrap_or_else(|| parts[0].0.tape().scalar(T::zero())))
}

/// Where the likelihood term takes its embeddings from.
pub enum NllEmbeddings<'a, T> {
    /// The same sample that is decoded.
    Encoded,
    /// Fixed values, row-major `[rows, embedding_dim]`.
    Values(&'a [T]),
}

/// Batch inputs for [`apc_losses`].
pub struct Batch<'a, T> {
    /// Circuit evidence with raw data values.
    pub evidence: &'a Evidence<T>,
    /// Decoder targets in `[0, 1]`, `[rows, num_data]`.
    pub target: &'a [T],
    /// Entries that count towards the reconstruction loss.
    pub mask: Option<&'a [bool]>,
}

/// Encodes the batch by conditional sampling, decodes the sample, and
/// forms the weighted objective.
pub fn apc_losses<'t, T: Scalar, R: Rng + ?Sized>(
    model: &Apc<T>,
    vars: &CircuitVars<'t, T>,
    decoder: &[Var<'t, T>],
    batch: &Batch<'_, T>,
    nll_z: NllEmbeddings<'_, T>,
    objective: &Objective,
    rng: &mut R,
) -> Result<Losses<'t, T>> {
    let c = &model.circuit;
    let w = &objective.weights;
    let enc = inference::encode(c, vars, batch.evidence, rng)?;
    let z_dec = if objective.detach { enc.z.detach() } else { enc.z };
    let pred = model.decoder.forward(decoder, z_dec)?;
    let rec = loss_rec(pred, batch.target, batch.mask)?;
    let kld = loss_kld(enc.mean, enc.log_std)?;
    let z = match nll_z {
        NllEmbeddings::Encoded => Embeddings::Node(enc.z),
        NllEmbeddings::Values(v) => Embeddings::Values(v),
    };
    let nll = loss_nll(c, vars, batch.evidence, z)?;
    let scale = rec_scale(
        objective.reduction,
        batch.evidence.rows(),
        batch.evidence.cols(),
        batch.mask,
    );
    let total = weighted_total([(rec, w.rec * scale), (kld, w.kld), (nll, w.nll)])?;
    Ok(Losses {
        rec,
        rec_scale: scale,
        kld,
        nll,
        total,
    })
}

struct Logger<'a> {
    out: Option<&'a mut dyn Write>,
    report: TrainReport,
}

impl Logger<'_> {
    fn record(&mut self, m: StepMetrics) -> Result<()> {
        if let Some(w) = self.out.as_mut() {
            writeln!(w, "{}", serde_json::to_string(&m).expect("metrics serialize"))?;
        }
        self.report.metrics.push(m);
        Ok(())
    }
}

fn check_finite(step: usize, vals: &[f64; 4]) -> Result<()> {
    if vals.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!(
            "loss at step {step}: rec={} kld={} nll={} total={}",
            vals[0], vals[1], vals[2], vals[3]
        )))
    }
}

fn at_step(step: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(m) => Error::NonFinite(format!("step {step}: {m}")),
        e => e,
    }
}

fn metrics(step: usize, lr: f64, v: [f64; 4]) -> StepMetrics {
    StepMetrics {
        step,
        lr,
        rec: v[0],
        kld: v[1],
        nll: v[2],
        total: v[3],
    }
}

/// Drops each entry with probability `p`; returns the observed mask.
fn drop_entries<T: Scalar>(e: &mut Evidence<T>, p: f64, rng: &mut impl Rng) -> Vec<bool> {
    let mut mask = vec![true; e.rows() * e.cols()];
    if p > 0.0 {
        for i in 0..e.rows() {
            for j in 0..e.cols() {
                if rng.random_bool(p) {
                    e.set(i, j, None);
                    mask[i * e.cols() + j] = false;
                }
            }
        }
    }
    mask
}

/// Applies one optimizer step to a circuit and decoder from gradients on
/// `vars` and `dec`.
struct ApcOptimizer<T> {
    opt: AdamW<T>,
}

impl<T: Scalar> ApcOptimizer<T> {
    fn new(model: &Apc<T>, cfg: &AdamWConfig) -> Self {
        let mut sizes = vec![model.circuit.params.sum_logits.len(), model.circuit.params.leaf.len()];
        sizes.extend(model.decoder.params().tensors.iter().map(Array::len));
        Self {
            opt: AdamW::new(*cfg, &sizes),
        }
    }

    fn step(
        &mut self,
        model: &mut Apc<T>,
        vars: &CircuitVars<'_, T>,
        dec: &[Var<'_, T>],
        lr_circuit: f64,
        lr_neural: f64,
        weight_decay: f64,
    ) {
        self.opt.begin_step();
        let g = vars.sum_logits.grad();
        self.opt
            .update(0, &mut model.circuit.params.sum_logits, g.data(), lr_circuit, 0.0);
        let g = vars.leaf.grad();
        self.opt
            .update(1, &mut model.circuit.params.leaf, g.data(), lr_circuit, 0.0);
        update_neural(&mut self.opt, 2, &mut model.decoder, dec, lr_neural, weight_decay);
        model.circuit.clamp_log_std();
    }
}

fn update_neural<T: Scalar>(
    opt: &mut AdamW<T>,
    first: usize,
    dec: &mut Decoder<T>,
    vars: &[Var<'_, T>],
    lr: f64,
    wd: f64,
) {
    for (k, (p, v)) in dec.params_mut().tensors.iter_mut().zip(vars).enumerate() {
        let g = v.grad();
        opt.update(first + k, p.data_mut(), g.data(), lr, wd);
    }
}

/// End-to-end training of a circuit encoder and neural decoder.
pub fn train_apc<T: Scalar>(
    model: &mut Apc<T>,
    data: &Dataset,
    cfg: &TrainConfig,
    log: Option<&mut dyn Write>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.cols() != model.circuit.num_data() {
        return Err(Error::Config(format!(
            "dataset has {} columns, circuit has {} data variables",
            data.cols(),
            model.circuit.num_data()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let schedule = Schedule::new(cfg.iterations);
    let mut opt = ApcOptimizer::new(model, &cfg.adam);
    let mut logger = Logger {
        out: log,
        report: TrainReport::default(),
    };
    for step in 0..cfg.iterations {
        let idx = sample_batch(data.rows(), cfg.batch_size, &mut rng);
        let mut e = data.evidence::<T>(&idx);
        let target = data.targets::<T>(&idx);
        let mask = drop_entries(&mut e, cfg.train_missing, &mut rng);
        let tape = Tape::new();
        let vars = inference::bind(&model.circuit, &tape);
        let dec = model.decoder.params().bind(&tape);
        let batch = Batch {
            evidence: &e,
            target: &target,
            mask: (cfg.train_missing > 0.0).then_some(&mask[..]),
        };
        let losses = apc_losses(
            model,
            &vars,
            &dec,
            &batch,
            NllEmbeddings::Encoded,
            &cfg.objective(),
            &mut rng,
        )
        .map_err(|e| at_step(step, e))?;
        let vals = losses.values();
        check_finite(step, &vals)?;
        losses.total.backward()?;
        let f = schedule.factor(step);
        opt.step(
            model,
            &vars,
            &dec,
            cfg.lr_circuit * f,
            cfg.lr_neural * f,
            cfg.weight_decay,
        );
        logger.record(metrics(step, cfg.lr_neural * f, vals))?;
    }
    Ok(logger.report)
}

/// Reparameterized ELBO training of the VAE baseline on zero-imputed inputs.
/// The likelihood component is reported as zero.
pub fn train_vae<T: Scalar>(
    vae: &mut Vae<T>,
    data: &Dataset,
    cfg: &TrainConfig,
    log: Option<&mut dyn Write>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.cols() != vae.input_dim() {
        return Err(Error::Config(format!(
            "dataset has {} columns, VAE expects {}",
            data.cols(),
            vae.input_dim()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let schedule = Schedule::new(cfg.iterations);
    let mut sizes: Vec<usize> = vae.encoder.params.tensors.iter().map(Array::len).collect();
    let ne = sizes.len();
    sizes.extend(vae.decoder.params().tensors.iter().map(Array::len));
    let mut opt = AdamW::new(cfg.adam, &sizes);
    let mut logger = Logger {
        out: log,
        report: TrainReport::default(),
    };
    let w = cfg.loss_weights;
    for step in 0..cfg.iterations {
        let idx = sample_batch(data.rows(), cfg.batch_size, &mut rng);
        let target = data.targets::<T>(&idx);
        let mut mask = vec![true; target.len()];
        if cfg.train_missing > 0.0 {
            for m in mask.iter_mut() {
                *m = !rng.random_bool(cfg.train_missing);
            }
        }
        let input = target_with_mask(&target, &mask);
        let tape = Tape::new();
        let p = vae.bind(&tape);
        let x = tape.constant(Array::new(vec![idx.len(), data.cols()], input)?);
        let out = vae.forward(&p, x, &mut rng).map_err(|e| at_step(step, e))?;
        let mask = (cfg.train_missing > 0.0).then_some(&mask[..]);
        let rec = loss_rec(out.reconstruction, &target, mask)?;
        let kld = loss_kld(out.mean, out.log_std)?;
        let nll = tape.scalar(T::zero());
        let scale = rec_scale(cfg.reconstruction, idx.len(), data.cols(), mask);
        let total = weighted_total([(rec, w.rec * scale), (kld, w.kld), (nll, 0.0)])?;
        let losses = Losses {
            rec,
            rec_scale: scale,
            kld,
            nll,
            total,
        };
        let vals = losses.values();
        check_finite(step, &vals)?;
        losses.total.backward()?;
        let lr = cfg.lr_neural * schedule.factor(step);
        opt.begin_step();
        for (k, (t, v)) in vae.encoder.params.tensors.iter_mut().zip(&p.encoder).enumerate() {
            let g = v.grad();
            opt.update(k, t.data_mut(), g.data(), lr, cfg.weight_decay);
        }
        update_neural(&mut opt, ne, &mut vae.decoder, &p.decoder, lr, cfg.weight_decay);
        logger.record(metrics(step, lr, vals))?;
    }
    Ok(logger.report)
}

/// Rounds teacher outputs in `[0, 1]` to the nearest value of the data
/// support, as the circuit's discrete leaves require.
pub fn quantize<T: Scalar>(values: &[T], kind: DataKind) -> Vec<T> {
    let m = T::c(kind.max_value() as f64);
    values
        .iter()
        .map(|&v| (v.max(T::zero()).min(T::one()) * m).round())
        .collect()
}

/// Data-free distillation: embeddings drawn from the student circuit are
/// decoded by the teacher into synthetic inputs, which the student then
/// learns to encode and reconstruct. The teacher is never updated.
pub fn distill<T: Scalar>(
    teacher: &Vae<T>,
    student: &mut Apc<T>,
    kind: DataKind,
    cfg: &TrainConfig,
    log: Option<&mut dyn Write>,
) -> Result<TrainReport> {
    cfg.validate()?;
    let nd = student.circuit.num_data();
    if teacher.input_dim() != nd || teacher.embedding_dim() != student.embedding_dim() {
        return Err(Error::Config("teacher and student dimensions differ".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let schedule = Schedule::new(cfg.iterations);
    let mut opt = ApcOptimizer::new(student, &cfg.adam);
    let mut logger = Logger {
        out: log,
        report: TrainReport::default(),
    };
    let b = cfg.batch_size;
    for step in 0..cfg.iterations {
        let (_, z) = sample_joint(&student.circuit, &mut rng, b);
        let x_teacher = teacher.decode_values(&z);
        let x_teacher = match x_teacher {
            Ok(x) if x.iter().all(|v| v.is_finite()) => x,
            Ok(_) | Err(Error::NonFinite(_)) => {
                logger.report.skipped += 1;
                continue;
            }
            Err(err) => return Err(err),
        };
        let z_teacher = teacher.encode_values(&x_teacher, None)?;
        let e = Evidence::observed_rows(b, nd, quantize(&x_teacher, kind))?;
        let tape = Tape::new();
        let vars = inference::bind(&student.circuit, &tape);
        let dec = student.decoder.params().bind(&tape);
        let batch = Batch {
            evidence: &e,
            target: &x_teacher,
            mask: None,
        };
        let losses = apc_losses(
            student,
            &vars,
            &dec,
            &batch,
            NllEmbeddings::Values(&z_teacher),
            &cfg.objective(),
            &mut rng,
        )
        .map_err(|e| at_step(step, e))?;
        let vals = losses.values();
        check_finite(step, &vals)?;
        losses.total.backward()?;
        let f = schedule.factor(step);
        opt.step(
            student,
            &vars,
            &dec,
            cfg.lr_circuit * f,
            cfg.lr_neural * f,
            cfg.weight_decay,
        );
        logger.record(metrics(step, cfg.lr_neural * f, vals))?;
    }
    Ok(logger.report)
}
