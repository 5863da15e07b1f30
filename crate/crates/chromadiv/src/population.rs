//! The population of message/aux tables and all dynamics protocols:
//! sequential and layered sweeps, controlled runs, annealed continuation,
//! and coupled damage pairs.

use crate::error::{Error, Result};
use crate::message::{finite_update_raw, zero_update_raw, KernelCtx, ZeroOutputs, MIN_TOL};
use crate::model::{EnsembleSpec, ModelParams, Side, Temperature};
use crate::observables::{measure_population, MeasureOpts, ObservableRecord, PopView};
use crate::rng::{stream, Domain};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Initial condition of the population dynamics.
///
/// `Zero` assigns every member a random colour and encodes it as an
/// integer-valued table (the message a leaf frozen to that colour would
/// send, with a penalty larger than any reachable cost difference).
/// `Random(eps)` adds i.i.d. uniform noise in [0, eps) on top.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum InitMode {
    Zero,
    Random(f64),
}

/// What a controlled run holds fixed, and which variable it moves.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ControlKind {
    /// fix the incomplete fraction by moving the mean connectivity
    FixedFincom,
    /// fix the Edwards-Anderson order parameter by moving the temperature
    FixedQea,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ControlTarget {
    pub kind: ControlKind,
    pub target: f64,
    pub gain: f64,
}

impl ControlTarget {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.target) {
            return Err(Error::Config(format!(
                "control target {} outside [0,1]",
                self.target
            )));
        }
        if self.gain <= 0.0 {
            return Err(Error::Config("control gain must be positive".into()));
        }
        Ok(())
    }
}

/// One sweep's worth of randomness: the update order and every descendant
/// draw, so a damage pair can replay the identical sequence.
pub(crate) struct SweepPlan {
    perm: Vec<u32>,
    desc: Vec<u32>,
    desc_off: Vec<u32>,
}

struct SweepScratch {
    desc_msg: Vec<f64>,
    desc_aux: Vec<f64>,
    out_msg: Vec<f64>,
    out_aux: Vec<f64>,
    kernel: Vec<f64>,
    layered_msg: Vec<f64>,
    layered_aux: Vec<f64>,
}

/// Population of cavity messages evolved by population dynamics.
#[derive(Clone)]
pub struct Population {
    ensemble: EnsembleSpec,
    ctx: KernelCtx,
    pub seed: u64,
    pub epoch: u64,
    n: usize,
    conn: Vec<u8>,
    nominal: Vec<u8>,
    msg: Vec<f64>,
    energy: Option<Vec<f64>>,
    entropy: Option<Vec<f64>>,
    class_lo: Vec<u32>,
    class_hi: Vec<u32>,
}

impl SweepScratch {
    fn new() -> Self {
        SweepScratch {
            desc_msg: Vec::new(),
            desc_aux: Vec::new(),
            out_msg: Vec::new(),
            out_aux: Vec::new(),
            kernel: Vec::new(),
            layered_msg: Vec::new(),
            layered_aux: Vec::new(),
        }
    }
}

thread_local! {
    static SCRATCH: std::cell::RefCell<SweepScratch> = std::cell::RefCell::new(SweepScratch::new());
}

/// Serialized form of a population; round-trips losslessly.
#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    params: ModelParams,
    ensemble: EnsembleSpec,
    seed: u64,
    epoch: u64,
    n: usize,
    conn: Vec<u8>,
    nominal: Vec<u8>,
    msg: Vec<f64>,
    energy: Option<Vec<f64>>,
    entropy: Option<Vec<f64>>,
}

const CHECKPOINT_FORMAT: &str = "chromadiv-population-v1";

impl Population {
    /// Build a population of `n` members with connectivities drawn from the
    /// node distribution. `with_energy` keeps vertex-energy tables during
    /// finite-temperature runs (needed for the global energy estimate);
    /// entropy tables are always kept in zero-temperature mode.
    pub fn init(
        n: usize,
        ensemble: EnsembleSpec,
        params: ModelParams,
        mode: InitMode,
        seed: u64,
        with_energy: bool,
    ) -> Result<Self> {
        if n < 1 {
            return Err(Error::Config("population size must be >= 1".into()));
        }
        if let InitMode::Random(eps) = mode {
            if eps <= 0.0 {
                return Err(Error::Config("random-init epsilon must be > 0".into()));
            }
        }
        let q = params.q;
        let max_c = ensemble.floor_c + 1;
        let ctx = KernelCtx::new(params, max_c);
        let mut rng = stream(seed, Domain::Init, 0);
        let mut conn = Vec::with_capacity(n);
        let mut nominal = Vec::with_capacity(n);
        for _ in 0..n {
            conn.push(ensemble.sample_connectivity(Side::Node, &mut rng) as u8);
            nominal.push(rng.gen_range(0..q) as u8);
        }
        let mut pop = Population {
            ensemble,
            ctx,
            seed,
            epoch: 0,
            n,
            conn,
            nominal,
            msg: vec![0.0; n * q * q],
            energy: None,
            entropy: None,
            class_lo: Vec::new(),
            class_hi: Vec::new(),
        };
        for j in 0..n {
            pop.write_encoded_table(j);
        }
        if let InitMode::Random(eps) = mode {
            let q2 = q * q;
            for j in 0..n {
                let t = &mut pop.msg[j * q2..(j + 1) * q2];
                for x in t.iter_mut() {
                    *x += eps * rng.gen::<f64>();
                }
                let g = t[0];
                t.iter_mut().for_each(|x| *x -= g);
            }
        }
        if params.temperature.is_zero() {
            pop.entropy = Some(vec![0.0; n * q * q]);
        } else if with_energy {
            pop.energy = Some(pop.msg.clone());
        }
        pop.rebuild_classes();
        Ok(pop)
    }

    /// Build a population directly from tables (synthetic states for
    /// cross-checks).
    pub fn from_tables(
        ensemble: EnsembleSpec,
        params: ModelParams,
        seed: u64,
        conn: Vec<u8>,
        msg: Vec<f64>,
        energy: Option<Vec<f64>>,
        entropy: Option<Vec<f64>>,
    ) -> Result<Self> {
        let q = params.q;
        let n = conn.len();
        if msg.len() != n * q * q {
            return Err(Error::Input("table buffer size mismatch".into()));
        }
        if params.temperature.is_zero() && entropy.is_none() {
            return Err(Error::Input("zero-temperature population needs entropy tables".into()));
        }
        let ctx = KernelCtx::new(params, ensemble.floor_c + 1);
        let nominal = vec![0u8; n];
        let mut pop = Population {
            ensemble,
            ctx,
            seed,
            epoch: 0,
            n,
            conn,
            nominal,
            msg,
            energy,
            entropy,
            class_lo: Vec::new(),
            class_hi: Vec::new(),
        };
        pop.rebuild_classes();
        Ok(pop)
    }

    /// The integer colour-encoding of member `j`'s nominal colour: the
    /// message of a leaf frozen to colour g, with a penalty above every
    /// reachable cost difference, gauge-fixed.
    fn write_encoded_table(&mut self, j: usize) {
        let q = self.ctx.q();
        let g = self.nominal[j] as usize;
        let pen = ((self.ensemble.floor_c + 2) * (self.ensemble.floor_c + 2)) as f64;
        let q2 = q * q;
        let t = &mut self.msg[j * q2..(j + 1) * q2];
        for a in 0..q {
            for b in 0..q {
                let pair_cost = if a == b { 4.0 } else { 2.0 };
                t[a * q + b] = pair_cost + if b == g { 0.0 } else { pen };
            }
        }
        let gauge = t[0];
        t.iter_mut().for_each(|x| *x -= gauge);
    }

    fn rebuild_classes(&mut self) {
        self.class_lo.clear();
        self.class_hi.clear();
        let lo = self.ensemble.floor_c as u8;
        for (i, &c) in self.conn.iter().enumerate() {
            if c == lo {
                self.class_lo.push(i as u32);
            } else {
                self.class_hi.push(i as u32);
            }
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn params(&self) -> &ModelParams {
        &self.ctx.params
    }

    pub fn ensemble(&self) -> &EnsembleSpec {
        &self.ensemble
    }

    pub fn kernel_ctx(&self) -> &KernelCtx {
        &self.ctx
    }

    pub fn connectivity(&self, j: usize) -> usize {
        self.conn[j] as usize
    }

    pub fn member_table(&self, j: usize) -> &[f64] {
        let q2 = self.ctx.q() * self.ctx.q();
        &self.msg[j * q2..(j + 1) * q2]
    }

    pub fn member_entropy(&self, j: usize) -> Option<&[f64]> {
        let q2 = self.ctx.q() * self.ctx.q();
        self.entropy.as_ref().map(|e| &e[j * q2..(j + 1) * q2])
    }

    pub fn view(&self) -> PopView<'_> {
        PopView {
            ctx: &self.ctx,
            ensemble: &self.ensemble,
            n: self.n,
            conn: &self.conn,
            msg: &self.msg,
            energy: self.energy.as_deref(),
            entropy: self.entropy.as_deref(),
            class_lo: &self.class_lo,
            class_hi: &self.class_hi,
        }
    }

    /// Extract the paramagnetic scalar of member `j` when its tables are
    /// colour-symmetric (within `tol`): exp(-beta (diag - offdiag)) at
    /// finite temperature; at zero temperature, 0 for a positive gap and
    /// exp(entropy gap) for a degenerate one.
    pub fn symmetric_z(&self, j: usize, tol: f64) -> Option<f64> {
        let q = self.ctx.q();
        let t = self.member_table(j);
        let mut diag = Vec::with_capacity(q);
        let mut off = Vec::with_capacity(q * q - q);
        for a in 0..q {
            for b in 0..q {
                if a == b {
                    diag.push(t[a * q + b]);
                } else {
                    off.push(t[a * q + b]);
                }
            }
        }
        let spread = |v: &[f64]| {
            v.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - v.iter().cloned().fold(f64::INFINITY, f64::min)
        };
        if spread(&diag) > tol || spread(&off) > tol {
            return None;
        }
        let gap = diag[0] - off[0];
        match self.ctx.params.temperature {
            Temperature::Finite(t) => Some((-gap / t).exp()),
            Temperature::Zero => {
                if gap.abs() <= tol {
                    let s = self.member_entropy(j)?;
                    Some((s[0] - s[1]).exp())
                } else if gap > 0.0 {
                    Some(0.0)
                } else {
                    None
                }
            }
        }
    }

    pub(crate) fn make_plan(&self, rng: &mut ChaCha8Rng) -> SweepPlan {
        let mut perm: Vec<u32> = (0..self.n as u32).collect();
        perm.shuffle(rng);
        let mut desc = Vec::with_capacity(self.n * self.ensemble.floor_c);
        let mut desc_off = Vec::with_capacity(self.n + 1);
        desc_off.push(0u32);
        let f_hi = self.ensemble.excess_probs.1;
        for &j in &perm {
            let k = self.conn[j as usize] as usize - 1;
            for _ in 0..k {
                let use_hi = f_hi > 0.0 && rng.gen::<f64>() < f_hi;
                let class: &[u32] = if use_hi { &self.class_hi } else { &self.class_lo };
                let class: &[u32] = if class.is_empty() {
                    if use_hi {
                        &self.class_lo
                    } else {
                        &self.class_hi
                    }
                } else {
                    class
                };
                desc.push(class[rng.gen_range(0..class.len())]);
            }
            desc_off.push(desc.len() as u32);
        }
        SweepPlan { perm, desc, desc_off }
    }

    /// Compute the update of member `j` from the current tables, leaving
    /// the results in `scratch.out_msg` / `scratch.out_aux`. Descendant
    /// tables are copied first so a member drawing itself reads a
    /// consistent snapshot.
    fn compute_update(&self, j: usize, descendants: &[u32], scratch: &mut SweepScratch) {
        let _ = j;
        let q = self.ctx.q();
        let q2 = q * q;
        let k = descendants.len();
        let m = k + 2;
        scratch.desc_msg.resize(k * q2, 0.0);
        for (i, &d) in descendants.iter().enumerate() {
            let d = d as usize;
            scratch.desc_msg[i * q2..(i + 1) * q2].copy_from_slice(&self.msg[d * q2..(d + 1) * q2]);
        }
        scratch.out_msg.resize(q2, 0.0);
        scratch.out_aux.resize(q2, 0.0);

        match self.ctx.params.temperature {
            Temperature::Zero => {
                let ent = self.entropy.as_ref().expect("zero-T population keeps entropy tables");
                scratch.desc_aux.resize(k * q2, 0.0);
                for (i, &d) in descendants.iter().enumerate() {
                    let d = d as usize;
                    scratch.desc_aux[i * q2..(i + 1) * q2]
                        .copy_from_slice(&ent[d * q2..(d + 1) * q2]);
                }
                let desc_refs: Vec<&[f64]> =
                    scratch.desc_msg.chunks_exact(q2).collect();
                let ent_refs: Vec<&[f64]> = scratch.desc_aux.chunks_exact(q2).collect();
                let mut outs = ZeroOutputs {
                    msg: &mut scratch.out_msg,
                    entropy: &mut scratch.out_aux,
                    counts: None,
                };
                zero_update_raw(
                    q,
                    self.ctx.costs.phi_table(m),
                    MIN_TOL,
                    &desc_refs,
                    &ent_refs,
                    &mut outs,
                );
            }
            Temperature::Finite(temp) => {
                let beta = 1.0 / temp;
                if let Some(en) = self.energy.as_ref() {
                    scratch.desc_aux.resize(k * q2, 0.0);
                    for (i, &d) in descendants.iter().enumerate() {
                        let d = d as usize;
                        scratch.desc_aux[i * q2..(i + 1) * q2]
                            .copy_from_slice(&en[d * q2..(d + 1) * q2]);
                    }
                    let desc_refs: Vec<&[f64]> = scratch.desc_msg.chunks_exact(q2).collect();
                    let e_refs: Vec<&[f64]> = scratch.desc_aux.chunks_exact(q2).collect();
                    finite_update_raw(
                        q,
                        beta,
                        temp,
                        self.ctx.costs.phi_table(m),
                        self.ctx.wphi(m),
                        self.ctx.phi_min(m),
                        self.ctx.phi_span(m),
                        &desc_refs,
                        Some(&e_refs),
                        &mut scratch.out_msg,
                        Some(&mut scratch.out_aux),
                        &mut scratch.kernel,
                    );
                } else {
                    let desc_refs: Vec<&[f64]> = scratch.desc_msg.chunks_exact(q2).collect();
                    finite_update_raw(
                        q,
                        beta,
                        temp,
                        self.ctx.costs.phi_table(m),
                        self.ctx.wphi(m),
                        self.ctx.phi_min(m),
                        self.ctx.phi_span(m),
                        &desc_refs,
                        None,
                        &mut scratch.out_msg,
                        None,
                        &mut scratch.kernel,
                    );
                }
            }
        }
    }

    fn commit_update(&mut self, j: usize, scratch: &SweepScratch) {
        let q2 = self.ctx.q() * self.ctx.q();
        self.msg[j * q2..(j + 1) * q2].copy_from_slice(&scratch.out_msg);
        if let Some(ent) = self.entropy.as_mut() {
            ent[j * q2..(j + 1) * q2].copy_from_slice(&scratch.out_aux);
        } else if let Some(en) = self.energy.as_mut() {
            en[j * q2..(j + 1) * q2].copy_from_slice(&scratch.out_aux);
        }
    }

    fn apply_plan_sequential(&mut self, plan: &SweepPlan) {
        SCRATCH.with(|s| {
            let mut scratch = s.borrow_mut();
            for (i, &j) in plan.perm.iter().enumerate() {
                let lo = plan.desc_off[i] as usize;
                let hi = plan.desc_off[i + 1] as usize;
                self.compute_update(j as usize, &plan.desc[lo..hi], &mut scratch);
                self.commit_update(j as usize, &scratch);
            }
        });
        self.epoch += 1;
    }

    /// One sequential sweep: every member updated once in a fresh random
    /// order, each update reading the current tables (writes are immediate).
    pub fn sweep_sequential(&mut self) {
        let mut rng = stream(self.seed, Domain::Sweep, self.epoch);
        let plan = self.make_plan(&mut rng);
        self.apply_plan_sequential(&plan);
    }

    /// One layered sweep: all updates read the epoch-t tables and commit
    /// synchronously. Returns the dominant-colour statistic of the new
    /// layer, which makes the modulation instability observable.
    pub fn sweep_layered(&mut self) -> LayeredReport {
        let mut rng = stream(self.seed, Domain::Sweep, self.epoch);
        let plan = self.make_plan(&mut rng);
        let q2 = self.ctx.q() * self.ctx.q();
        let has_aux = self.entropy.is_some() || self.energy.is_some();
        SCRATCH.with(|s| {
            let mut scratch = s.borrow_mut();
            let mut new_msg = std::mem::take(&mut scratch.layered_msg);
            let mut new_aux = std::mem::take(&mut scratch.layered_aux);
            new_msg.resize(self.n * q2, 0.0);
            new_aux.resize(if has_aux { self.n * q2 } else { 0 }, 0.0);
            for (i, &j) in plan.perm.iter().enumerate() {
                let lo = plan.desc_off[i] as usize;
                let hi = plan.desc_off[i + 1] as usize;
                self.compute_update(j as usize, &plan.desc[lo..hi], &mut scratch);
                let j = j as usize;
                new_msg[j * q2..(j + 1) * q2].copy_from_slice(&scratch.out_msg);
                if has_aux {
                    new_aux[j * q2..(j + 1) * q2].copy_from_slice(&scratch.out_aux);
                }
            }
            scratch.layered_msg = std::mem::replace(&mut self.msg, new_msg);
            if has_aux {
                if let Some(ent) = self.entropy.as_mut() {
                    scratch.layered_aux = std::mem::replace(ent, new_aux);
                } else if let Some(en) = self.energy.as_mut() {
                    scratch.layered_aux = std::mem::replace(en, new_aux);
                }
            } else {
                scratch.layered_aux = new_aux;
            }
        });
        self.epoch += 1;
        self.layer_report()
    }

    /// Population-averaged colour marginal and its maximum.
    fn layer_report(&self) -> LayeredReport {
        let q = self.ctx.q();
        let q2 = q * q;
        let mut marginal = vec![0.0; q];
        match self.ctx.params.temperature {
            Temperature::Finite(t) => {
                let beta = 1.0 / t;
                for j in 0..self.n {
                    let tab = &self.msg[j * q2..(j + 1) * q2];
                    let lo = tab.iter().cloned().fold(f64::INFINITY, f64::min);
                    let mut w = vec![0.0; q];
                    for a in 0..q {
                        for b in 0..q {
                            w[b] += (-beta * (tab[a * q + b] - lo)).exp();
                        }
                    }
                    let tot: f64 = w.iter().sum();
                    for b in 0..q {
                        marginal[b] += w[b] / tot;
                    }
                }
            }
            Temperature::Zero => {
                for j in 0..self.n {
                    let tab = &self.msg[j * q2..(j + 1) * q2];
                    let lo = tab.iter().cloned().fold(f64::INFINITY, f64::min);
                    let mut w = vec![0.0; q];
                    for a in 0..q {
                        for b in 0..q {
                            if tab[a * q + b] <= lo + MIN_TOL {
                                w[b] += 1.0;
                            }
                        }
                    }
                    let tot: f64 = w.iter().sum();
                    for b in 0..q {
                        marginal[b] += w[b] / tot;
                    }
                }
            }
        }
        let mut best = 0;
        for b in 1..q {
            if marginal[b] > marginal[best] {
                best = b;
            }
        }
        LayeredReport {
            dominant_colour: best,
            dominant_fraction: marginal[best] / self.n as f64,
        }
    }

    /// Measure the standard observables on the current snapshot, using the
    /// measurement stream for this epoch.
    pub fn measure(&self, n_test: usize) -> Result<ObservableRecord> {
        let mut rng = stream(self.seed, Domain::Measure, self.epoch);
        measure_population(&self.view(), MeasureOpts { n_test, epoch: self.epoch }, &mut rng)
    }

    /// Move the run to a new mean connectivity: rebuild the ensemble and
    /// migrate randomly chosen members between the two connectivity classes
    /// so the class counts track the node probabilities. Migrated members
    /// keep their tables until their next update.
    pub fn set_mean_connectivity(&mut self, mean_c: f64, rng: &mut ChaCha8Rng) -> Result<()> {
        let q = self.ctx.q();
        let new = EnsembleSpec::from_mean(mean_c, q)?;
        if new.floor_c != self.ensemble.floor_c {
            // keep both classes meaningful across the move
            if !(new.floor_c + 1 == self.ensemble.floor_c || self.ensemble.floor_c + 1 == new.floor_c
                || new.floor_c == self.ensemble.floor_c)
            {
                return Err(Error::Config(format!(
                    "connectivity move from {} to {} crosses more than one class",
                    self.ensemble.mean_connectivity, mean_c
                )));
            }
        }
        self.ensemble = new;
        let lo_c = self.ensemble.floor_c as u8;
        let hi_c = lo_c + 1;
        // normalize member classes to the new floor
        for c in self.conn.iter_mut() {
            if *c < lo_c {
                *c = lo_c;
            }
            if *c > hi_c {
                *c = hi_c;
            }
        }
        self.rebuild_classes();
        let want_hi = (self.ensemble.node_probs.1 * self.n as f64).round() as usize;
        while self.class_hi.len() > want_hi {
            let i = rng.gen_range(0..self.class_hi.len());
            let member = self.class_hi.swap_remove(i);
            self.conn[member as usize] = lo_c;
            self.class_lo.push(member);
        }
        while self.class_hi.len() < want_hi {
            let i = rng.gen_range(0..self.class_lo.len());
            let member = self.class_lo.swap_remove(i);
            self.conn[member as usize] = hi_c;
            self.class_hi.push(member);
        }
        Ok(())
    }

    /// Move the run to a new finite temperature; the kernel context is
    /// rebuilt for the new Boltzmann factors.
    pub fn set_temperature(&mut self, t: f64) -> Result<()> {
        let temp = Temperature::new(t)?;
        if temp.is_zero() != self.ctx.params.temperature.is_zero() {
            return Err(Error::Config(
                "cannot cross between zero and finite temperature modes mid-run".into(),
            ));
        }
        let params = ModelParams::new(self.ctx.q(), temp, self.ctx.params.lambda)?;
        self.ctx = KernelCtx::new(params, self.ensemble.floor_c + 1);
        Ok(())
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let cp = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            params: self.ctx.params,
            ensemble: self.ensemble,
            seed: self.seed,
            epoch: self.epoch,
            n: self.n,
            conn: self.conn.clone(),
            nominal: self.nominal.clone(),
            msg: self.msg.clone(),
            energy: self.energy.clone(),
            entropy: self.entropy.clone(),
        };
        let f = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(f), &cp)
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        let cp: Checkpoint = serde_json::from_reader(std::io::BufReader::new(f))
            .map_err(|e| Error::Config(format!("bad checkpoint: {e}")))?;
        if cp.format != CHECKPOINT_FORMAT {
            return Err(Error::Config(format!("unknown checkpoint format {}", cp.format)));
        }
        let ctx = KernelCtx::new(cp.params, cp.ensemble.floor_c + 1);
        let mut pop = Population {
            ensemble: cp.ensemble,
            ctx,
            seed: cp.seed,
            epoch: cp.epoch,
            n: cp.n,
            conn: cp.conn,
            nominal: cp.nominal,
            msg: cp.msg,
            energy: cp.energy,
            entropy: cp.entropy,
            class_lo: Vec::new(),
            class_hi: Vec::new(),
        };
        pop.rebuild_classes();
        Ok(pop)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayeredReport {
    pub dominant_colour: usize,
    pub dominant_fraction: f64,
}

/// A point in an annealing schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SchedulePoint {
    MeanC(f64),
    Temp(f64),
}

/// Equilibrate at each schedule point, then measure; the state carries over
/// between points so a paramagnetic branch can be continued below its
/// spinodal.
pub fn run_annealed(
    pop: &mut Population,
    schedule: &[SchedulePoint],
    eq_sweeps: usize,
    meas_sweeps: usize,
    n_test: usize,
) -> Result<Vec<(f64, ObservableRecord)>> {
    // schedule must be monotone in its variable
    let vals: Vec<f64> = schedule
        .iter()
        .map(|p| match p {
            SchedulePoint::MeanC(x) | SchedulePoint::Temp(x) => *x,
        })
        .collect();
    let inc = vals.windows(2).all(|w| w[1] >= w[0]);
    let dec = vals.windows(2).all(|w| w[1] <= w[0]);
    if !(inc || dec) {
        return Err(Error::Config("annealing schedule must be monotone".into()));
    }
    let mut out = Vec::with_capacity(schedule.len());
    for (i, point) in schedule.iter().enumerate() {
        match *point {
            SchedulePoint::MeanC(c) => {
                let mut rng = stream(pop.seed, Domain::Anneal, i as u64);
                pop.set_mean_connectivity(c, &mut rng)?;
            }
            SchedulePoint::Temp(t) => pop.set_temperature(t)?,
        }
        for _ in 0..eq_sweeps {
            pop.sweep_sequential();
        }
        let mut recs = Vec::with_capacity(meas_sweeps.max(1));
        for _ in 0..meas_sweeps.max(1) {
            pop.sweep_sequential();
            recs.push(pop.measure(n_test)?);
        }
        out.push((vals[i], average_records(&recs)));
    }
    Ok(out)
}

/// Run population dynamics with a feedback loop pinning one observable.
///
/// For a fixed incomplete fraction, the connectivity implied by the
/// class-conditioned interpolation is tracked; for fixed q_EA the
/// temperature moves opposite to the error, which stabilises both the
/// stable and the unstable branch. Returns (control value, record) per
/// sweep.
pub fn run_controlled(
    pop: &mut Population,
    control: ControlTarget,
    sweeps: usize,
    n_test: usize,
) -> Result<Vec<(f64, ObservableRecord)>> {
    control.validate()?;
    let mut out = Vec::with_capacity(sweeps);
    let mut at_bound = 0usize;
    for s in 0..sweeps {
        pop.sweep_sequential();
        let rec = pop.measure(n_test)?;
        match control.kind {
            ControlKind::FixedFincom => {
                let (f_lo, f_hi) = rec.f_incom_by_c;
                let cur = pop.ensemble.mean_connectivity;
                if f_lo.is_finite() && f_hi.is_finite() && (f_lo - f_hi).abs() > 1e-9 {
                    let implied = pop.ensemble.floor_c as f64
                        + (control.target - f_lo) / (f_hi - f_lo);
                    let next = (cur + control.gain * (implied - cur)).clamp(3.0, 4.0);
                    if next <= 3.0 || next >= 4.0 {
                        at_bound += 1;
                    } else {
                        at_bound = 0;
                    }
                    let mut rng = stream(pop.seed, Domain::Control, s as u64);
                    pop.set_mean_connectivity(next, &mut rng)?;
                }
                out.push((pop.ensemble.mean_connectivity, rec));
            }
            ControlKind::FixedQea => {
                let t = match pop.params().temperature {
                    Temperature::Finite(t) => t,
                    Temperature::Zero => {
                        return Err(Error::Config(
                            "fixed-q_EA control needs a finite temperature".into(),
                        ))
                    }
                };
                let next = (t + control.gain * (rec.q_ea - control.target)).clamp(0.05, 2.0);
                if next <= 0.05 || next >= 2.0 {
                    at_bound += 1;
                } else {
                    at_bound = 0;
                }
                pop.set_temperature(next)?;
                out.push((next, rec));
            }
        }
        if at_bound > 50 {
            return Err(Error::Numeric(format!(
                "control variable pinned at its admissible bound for {at_bound} sweeps \
                 (target {} unreachable)",
                control.target
            )));
        }
    }
    Ok(out)
}

/// Trajectory of a damage experiment.
#[derive(Clone, Debug, Serialize)]
pub struct DamageTrajectory {
    pub d: Vec<f64>,
    pub damaged_members: Vec<u32>,
    pub final_a: ObservableRecord,
    pub final_b: ObservableRecord,
}

/// Clone the population, invert the initial colours of the descendants of
/// one randomly chosen node in the clone (colour g -> Q+1-g, as a
/// relabelling), then evolve both copies with one shared randomness stream:
/// identical permutations and identical descendant draws. Requires a
/// freshly initialized population.
pub fn evolve_damage_pair(
    pop: &Population,
    seed: u64,
    sweeps: usize,
    n_test: usize,
) -> Result<DamageTrajectory> {
    if pop.epoch != 0 {
        return Err(Error::Input(
            "damage pairs must start from a freshly initialized population".into(),
        ));
    }
    let mut a = pop.clone();
    let mut b = pop.clone();
    let q = pop.ctx.q();
    let mut rng = stream(seed, Domain::Damage, 0);
    let j = rng.gen_range(0..pop.n);
    let k = pop.conn[j] as usize - 1;
    let mut damaged = Vec::with_capacity(k);
    for _ in 0..k {
        let v = b.view();
        let member = v.draw_excess(&mut rng);
        damaged.push(member as u32);
    }
    for &m in &damaged {
        let m = m as usize;
        b.nominal[m] = (q - 1 - b.nominal[m] as usize) as u8;
        b.write_encoded_table(m);
    }
    let mut d = Vec::with_capacity(sweeps);
    for epoch in 0..sweeps {
        let mut sweep_rng = stream(seed, Domain::Sweep, epoch as u64);
        let plan = a.make_plan(&mut sweep_rng);
        a.apply_plan_sequential(&plan);
        b.apply_plan_sequential(&plan);
        let mut meas_rng = stream(seed, Domain::Measure, epoch as u64);
        d.push(crate::observables::damage_distance(
            &a.view(),
            &b.view(),
            n_test,
            &mut meas_rng,
        )?);
    }
    let final_a = a.measure(n_test)?;
    let final_b = b.measure(n_test)?;
    Ok(DamageTrajectory { d, damaged_members: damaged, final_a, final_b })
}

/// Field-wise average of measurement records (histograms are summed).
pub fn average_records(recs: &[ObservableRecord]) -> ObservableRecord {
    assert!(!recs.is_empty());
    let n = recs.len() as f64;
    let mut out = recs[0].clone();
    let opt_mean = |get: &dyn Fn(&ObservableRecord) -> Option<f64>| -> Option<f64> {
        let vals: Vec<f64> = recs.iter().filter_map(get).collect();
        if vals.len() == recs.len() {
            Some(vals.iter().sum::<f64>() / n)
        } else {
            None
        }
    };
    out.f_av = recs.iter().map(|r| r.f_av).sum::<f64>() / n;
    out.e_av_local = recs.iter().map(|r| r.e_av_local).sum::<f64>() / n;
    out.e_av_global = opt_mean(&|r| r.e_av_global);
    out.s_av = opt_mean(&|r| r.s_av);
    out.q_ea = recs.iter().map(|r| r.q_ea).sum::<f64>() / n;
    out.f_incom = recs.iter().map(|r| r.f_incom).sum::<f64>() / n;
    out.f_incom_by_c = (
        recs.iter().map(|r| r.f_incom_by_c.0).sum::<f64>() / n,
        recs.iter().map(|r| r.f_incom_by_c.1).sum::<f64>() / n,
    );
    out.f_unsat = recs.iter().map(|r| r.f_unsat).sum::<f64>() / n;
    out.d = opt_mean(&|r| r.d);
    out.n_test = recs.iter().map(|r| r.n_test).sum();
    out.n_pairs = recs.iter().map(|r| r.n_pairs).sum();
    let mut hist = vec![0u32; out.histogram.len()];
    for r in recs {
        for (h, x) in hist.iter_mut().zip(&r.histogram) {
            *h += x;
        }
    }
    out.histogram = hist;
    out.epoch = recs.last().unwrap().epoch;
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params_zero(q: usize) -> ModelParams {
        ModelParams::new(q, Temperature::Zero, 1.0).unwrap()
    }

    fn make(n: usize, mean_c: f64, t: Temperature, mode: InitMode, seed: u64) -> Population {
        let ens = EnsembleSpec::from_mean(mean_c, 4).unwrap();
        let params = ModelParams::new(4, t, 1.0).unwrap();
        Population::init(n, ens, params, mode, seed, false).unwrap()
    }

    #[test]
    fn zero_init_tables_are_integers() {
        let pop = make(50, 3.5, Temperature::Zero, InitMode::Zero, 11);
        for j in 0..pop.n() {
            for &x in pop.member_table(j) {
                assert_eq!(x, x.round());
            }
        }
    }

    #[test]
    fn random_init_stays_close_to_zero_init() {
        let eps = 1e-6;
        let a = make(40, 3.5, Temperature::Zero, InitMode::Zero, 5);
        let b = make(40, 3.5, Temperature::Zero, InitMode::Random(eps), 5);
        for j in 0..a.n() {
            let ta = a.member_table(j);
            let tb = b.member_table(j);
            for (x, y) in ta.iter().zip(tb) {
                // gauge subtraction can double the per-cell deviation
                assert!((x - y).abs() < 2.0 * eps, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn equal_seeds_give_bitwise_identical_trajectories() {
        let mut a = make(60, 3.5, Temperature::Zero, InitMode::Zero, 42);
        let mut b = make(60, 3.5, Temperature::Zero, InitMode::Zero, 42);
        for _ in 0..5 {
            a.sweep_sequential();
            b.sweep_sequential();
        }
        assert_eq!(a.msg, b.msg);
        assert_eq!(a.entropy, b.entropy);
        let ra = a.measure(500).unwrap();
        let rb = b.measure(500).unwrap();
        assert_eq!(ra.f_av.to_bits(), rb.f_av.to_bits());
        assert_eq!(ra.q_ea.to_bits(), rb.q_ea.to_bits());
    }

    #[test]
    fn c4_zero_t_converges_to_symmetric_fixed_point() {
        // every member's entropy-gap scalar approaches sqrt(2)-1
        let mut pop = make(200, 4.0, Temperature::Zero, InitMode::Zero, 7);
        for _ in 0..150 {
            pop.sweep_sequential();
        }
        let z_star = 2f64.sqrt() - 1.0;
        for j in 0..pop.n() {
            let z = pop.symmetric_z(j, 1e-6).expect("symmetric member");
            assert!((z - z_star).abs() < 1e-6, "member {j}: z = {z}");
        }
    }

    #[test]
    fn n1_population_is_a_self_map() {
        let mut pop = make(1, 3.0, Temperature::Zero, InitMode::Zero, 3);
        for _ in 0..20 {
            pop.sweep_sequential();
        }
        assert_eq!(pop.epoch, 20);
        assert!(pop.member_table(0).iter().all(|x| x.is_finite()));
    }

    #[test]
    fn excess_draw_frequency_matches_link_probability() {
        let pop = make(2000, 3.5, Temperature::Zero, InitMode::Zero, 9);
        let mut rng = stream(1, Domain::Measure, 0);
        let v = pop.view();
        let n = 100_000;
        let mut hi = 0usize;
        for _ in 0..n {
            let m = v.draw_excess(&mut rng);
            if pop.connectivity(m) == 4 {
                hi += 1;
            }
        }
        let p = 4.0 / 7.0;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!(((hi as f64 / n as f64) - p).abs() < 3.0 * sigma);
    }

    #[test]
    fn layered_sweep_preserves_colour_symmetry() {
        // start from an exactly symmetric population
        let ens = EnsembleSpec::from_mean(4.0, 4).unwrap();
        let q2 = 16;
        let n = 50;
        let mut msg = Vec::with_capacity(n * q2);
        for _ in 0..n {
            for a in 0..4 {
                for b in 0..4usize {
                    msg.push(if a == b { 0.0 } else { -1.5 });
                }
            }
        }
        let mut pop = Population::from_tables(
            ens,
            params_zero(4),
            13,
            vec![4; n],
            msg,
            None,
            Some(vec![0.0; n * q2]),
        )
        .unwrap();
        let rep = pop.sweep_layered();
        assert!((rep.dominant_fraction - 0.25).abs() < 1e-9);
        for j in 0..n {
            assert!(pop.symmetric_z(j, 1e-9).is_some(), "member {j} lost symmetry");
        }
    }

    #[test]
    fn checkpoint_roundtrip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let mut pop = make(30, 3.7, Temperature::Zero, InitMode::Random(1e-6), 21);
        for _ in 0..3 {
            pop.sweep_sequential();
        }
        let path = dir.path().join("pop.json");
        pop.save_checkpoint(&path).unwrap();
        let back = Population::load_checkpoint(&path).unwrap();
        assert_eq!(pop.msg, back.msg);
        assert_eq!(pop.entropy, back.entropy);
        assert_eq!(pop.conn, back.conn);
        assert_eq!(pop.epoch, back.epoch);
        // resuming produces the identical trajectory
        let mut resumed = back;
        let mut orig = pop.clone();
        orig.sweep_sequential();
        resumed.sweep_sequential();
        assert_eq!(orig.msg, resumed.msg);
    }

    #[test]
    fn damage_distance_of_identical_views_is_zero() {
        let pop = make(100, 3.0, Temperature::Zero, InitMode::Zero, 17);
        let mut rng = stream(2, Domain::Measure, 1);
        let d = crate::observables::damage_distance(&pop.view(), &pop.view(), 200, &mut rng)
            .unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn damage_pair_requires_fresh_population() {
        let mut pop = make(30, 3.0, Temperature::Zero, InitMode::Zero, 19);
        pop.sweep_sequential();
        assert!(evolve_damage_pair(&pop, 1, 2, 50).is_err());
    }

    #[test]
    fn connectivity_migration_tracks_node_probs() {
        let mut pop = make(1000, 3.5, Temperature::Zero, InitMode::Zero, 23);
        let mut rng = stream(3, Domain::Control, 0);
        pop.set_mean_connectivity(3.8, &mut rng).unwrap();
        let hi = pop.conn.iter().filter(|&&c| c == 4).count();
        assert_eq!(hi, 800);
        pop.set_mean_connectivity(3.1, &mut rng).unwrap();
        let hi = pop.conn.iter().filter(|&&c| c == 4).count();
        assert_eq!(hi, 100);
    }
}
