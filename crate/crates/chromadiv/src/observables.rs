//! Ensemble observables from a population snapshot, with matched node/link
//! sampling so every per-member gauge constant cancels exactly.
//!
//! The free energy (and the global energy and zero-temperature entropy)
//! assemble as
//!     node average + (1/n_test) * sum over link pairs,
//! where the link pairs are drawn from the exact multiset of member usages
//! recorded during the node average. Each member appears in the link term
//! exactly as often as in the node term, so the additive constants carried
//! by its tables drop out identically, not just in expectation.

use crate::error::{Error, Result};
use crate::math::LogSumExp;
use crate::message::KernelCtx;
use crate::model::{EnsembleSpec, ModelParams, Temperature};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Moment-histogram resolution: bins of width 1/200 over [0, 1], fine
/// enough to separate peaks at 1/5 and 1/4.
pub const HIST_BINS: usize = 200;

/// One measurement epoch worth of ensemble observables.
#[derive(Clone, Debug, Serialize)]
pub struct ObservableRecord {
    pub epoch: u64,
    pub mean_c: f64,
    pub t: f64,
    /// average free energy per node
    pub f_av: f64,
    /// local energy estimate (Boltzmann/entropy-weighted mean cost)
    pub e_av_local: f64,
    /// global energy estimate from vertex-energy tables; equals `f_av` in
    /// the zero-temperature mode, `None` when energy tables are not kept
    pub e_av_global: Option<f64>,
    /// entropy: (e_global - f_av)/T at finite T, the minimiser-counting
    /// assembly at zero T
    pub s_av: Option<f64>,
    pub q_ea: f64,
    pub f_incom: f64,
    /// f_incom conditioned on the two connectivity classes (floor, floor+1)
    pub f_incom_by_c: (f64, f64),
    pub f_unsat: f64,
    /// damage distance, present only in damage runs
    pub d: Option<f64>,
    pub n_test: usize,
    pub n_pairs: usize,
    /// colour-moment histogram counts over [0,1]
    pub histogram: Vec<u32>,
}

/// Read-only view of a population used by the measurement routines.
#[derive(Clone, Copy)]
pub struct PopView<'a> {
    pub ctx: &'a KernelCtx,
    pub ensemble: &'a EnsembleSpec,
    pub n: usize,
    pub conn: &'a [u8],
    pub msg: &'a [f64],
    pub energy: Option<&'a [f64]>,
    pub entropy: Option<&'a [f64]>,
    pub class_lo: &'a [u32],
    pub class_hi: &'a [u32],
}

impl<'a> PopView<'a> {
    pub fn params(&self) -> &'a ModelParams {
        &self.ctx.params
    }

    #[inline]
    fn q2(&self) -> usize {
        self.ctx.params.q * self.ctx.params.q
    }

    #[inline]
    fn table(&self, member: usize) -> &'a [f64] {
        let q2 = self.q2();
        &self.msg[member * q2..(member + 1) * q2]
    }

    #[inline]
    fn energy_table(&self, member: usize) -> Option<&'a [f64]> {
        let q2 = self.q2();
        self.energy.map(|e| &e[member * q2..(member + 1) * q2])
    }

    #[inline]
    fn entropy_table(&self, member: usize) -> Option<&'a [f64]> {
        let q2 = self.q2();
        self.entropy.map(|e| &e[member * q2..(member + 1) * q2])
    }

    /// Excess-probability member draw: pick the connectivity class with its
    /// link-side probability, then a uniform member of that class. An empty
    /// class falls back to the other one.
    pub fn draw_excess(&self, rng: &mut ChaCha8Rng) -> usize {
        let hi = self.ensemble.excess_probs.1 > 0.0
            && rng.gen::<f64>() < self.ensemble.excess_probs.1;
        let class = if hi { self.class_hi } else { self.class_lo };
        let class = if class.is_empty() {
            if hi {
                self.class_lo
            } else {
                self.class_hi
            }
        } else {
            class
        };
        class[rng.gen_range(0..class.len())] as usize
    }
}

/// Per-test-node output of the neighbourhood trace.
#[derive(Clone, Debug)]
pub struct NodeTrace {
    /// node free-energy term: -T ln Tr (finite T) or the minimum (zero T)
    pub free_energy: f64,
    /// weighted mean of the local cost
    pub e_local: f64,
    /// weighted mean of (sum of descendant vertex energies + cost); only
    /// meaningful when energy tables were supplied
    pub e_aux: f64,
    /// zero-T: ln sum over minimising colourings of exp(entropy sums)
    pub s_term: f64,
    /// colour moments of the centre node, normalized to 1
    pub moments: Vec<f64>,
    /// indicator average: neighbourhood missing at least one colour
    pub incom: f64,
    /// mean fraction of missing colours
    pub unsat: f64,
}

/// Enumerate neighbour colour vectors; `visit(phi_index, msg_sum, rank)`.
/// The cost-table tuple is (q_i, q_1, .., q_C), so `phi_index` carries the
/// centre colour in its lowest digit.
#[inline]
fn for_each_nb_config(
    q: usize,
    qi: usize,
    rows: &[&[f64]],
    mut visit: impl FnMut(usize, f64, usize),
) {
    match rows.len() {
        1 => {
            let r0 = rows[0];
            for (c0, &f0) in r0.iter().enumerate() {
                visit(qi + c0 * q, f0, c0);
            }
        }
        2 => {
            let (r0, r1) = (rows[0], rows[1]);
            let q2 = q * q;
            for (c1, &f1) in r1.iter().enumerate() {
                let base = qi + c1 * q2;
                for (c0, &f0) in r0.iter().enumerate() {
                    visit(base + c0 * q, f0 + f1, c0 + c1 * q);
                }
            }
        }
        3 => {
            let (r0, r1, r2) = (rows[0], rows[1], rows[2]);
            let q2 = q * q;
            let q3 = q2 * q;
            for (c2, &f2) in r2.iter().enumerate() {
                for (c1, &f1) in r1.iter().enumerate() {
                    let s12 = f1 + f2;
                    let base = qi + c1 * q2 + c2 * q3;
                    let rank12 = (c1 + c2 * q) * q;
                    for (c0, &f0) in r0.iter().enumerate() {
                        visit(base + c0 * q, f0 + s12, c0 + rank12);
                    }
                }
            }
        }
        4 => {
            let (r0, r1, r2, r3) = (rows[0], rows[1], rows[2], rows[3]);
            let q2 = q * q;
            let q3 = q2 * q;
            let q4 = q3 * q;
            for (c3, &f3) in r3.iter().enumerate() {
                for (c2, &f2) in r2.iter().enumerate() {
                    let s23 = f2 + f3;
                    for (c1, &f1) in r1.iter().enumerate() {
                        let s123 = f1 + s23;
                        let base = qi + c1 * q2 + c2 * q3 + c3 * q4;
                        let rank123 = (c1 + c2 * q + c3 * q2) * q;
                        for (c0, &f0) in r0.iter().enumerate() {
                            visit(base + c0 * q, f0 + s123, c0 + rank123);
                        }
                    }
                }
            }
        }
        n => {
            let total = q.pow(n as u32);
            let mut digits = vec![0usize; n];
            for rank in 0..total {
                let s: f64 = rows.iter().zip(&digits).map(|(r, &d)| r[d]).sum();
                let mut idx = qi;
                let mut mult = q;
                for &d in &digits {
                    idx += d * mult;
                    mult *= q;
                }
                visit(idx, s, rank);
                for d in digits.iter_mut() {
                    *d += 1;
                    if *d < q {
                        break;
                    }
                    *d = 0;
                }
            }
        }
    }
}

/// Scratch buffers reused across test nodes.
pub struct MeasureScratch {
    w: Vec<f64>,
    rowmin: Vec<f64>,
    block_w: Vec<f64>,
    block_phi: Vec<f64>,
    block_e: Vec<f64>,
    block_incom: Vec<f64>,
    block_unsat: Vec<f64>,
    ties: Vec<(u32, u32, f64)>,
    rows: Vec<usize>,
}

impl MeasureScratch {
    pub fn new() -> Self {
        MeasureScratch {
            w: Vec::new(),
            rowmin: Vec::new(),
            block_w: Vec::new(),
            block_phi: Vec::new(),
            block_e: Vec::new(),
            block_incom: Vec::new(),
            block_unsat: Vec::new(),
            ties: Vec::new(),
            rows: Vec::new(),
        }
    }
}

impl Default for MeasureScratch {
    fn default() -> Self {
        Self::new()
    }
}

/// Finite-temperature neighbourhood trace over all colourings of a test
/// node and its neighbours (the messages' first index is the centre
/// colour). Weights are Boltzmann factors of (message sums + cost).
pub fn node_trace_finite(
    ctx: &KernelCtx,
    beta: f64,
    temp: f64,
    msgs: &[&[f64]],
    energies: Option<&[&[f64]]>,
    scratch: &mut MeasureScratch,
) -> NodeTrace {
    let q = ctx.q();
    let c = msgs.len();
    let m = c + 1;
    let phi = ctx.costs.phi_table(m);
    let wphi = ctx.wphi(m);
    let phi_min = ctx.phi_min(m);
    let dis = ctx.costs.distinct_table(m);
    let qf = q as f64;

    // row-shifted weights per neighbour and centre colour
    scratch.w.clear();
    scratch.w.resize(c * q * q, 0.0);
    scratch.rowmin.clear();
    scratch.rowmin.resize(c * q, 0.0);
    for (j, t) in msgs.iter().enumerate() {
        for qi in 0..q {
            let r = &t[qi * q..(qi + 1) * q];
            let lo = r.iter().cloned().fold(f64::INFINITY, f64::min);
            scratch.rowmin[j * q + qi] = lo;
            for (cc, &f) in r.iter().enumerate() {
                scratch.w[(j * q + qi) * q + cc] = (-beta * (f - lo)).exp();
            }
        }
    }

    let bw = &mut scratch.block_w;
    let bp = &mut scratch.block_phi;
    let be = &mut scratch.block_e;
    let bi = &mut scratch.block_incom;
    let bu = &mut scratch.block_unsat;
    for v in [&mut *bw, &mut *bp, &mut *be, &mut *bi, &mut *bu] {
        v.clear();
        v.resize(q, 0.0);
    }
    let mut shifts = vec![0.0; q];

    for qi in 0..q {
        let mut wrows: Vec<&[f64]> = Vec::with_capacity(c);
        for j in 0..c {
            wrows.push(&scratch.w[(j * q + qi) * q..(j * q + qi + 1) * q]);
        }
        shifts[qi] = (0..c).map(|j| scratch.rowmin[j * q + qi]).sum();
        let mut sw = 0.0;
        let mut sp = 0.0;
        let mut se = 0.0;
        let mut si = 0.0;
        let mut su = 0.0;
        if let Some(ens) = energies {
            let mut erows: Vec<&[f64]> = Vec::with_capacity(c);
            for e in ens {
                erows.push(&e[qi * q..(qi + 1) * q]);
            }
            for_each_nb_config(q, qi, &wrows, |idx, _s, rank| {
                let mut wgt = wphi[idx];
                let mut es = phi[idx];
                let mut r = rank;
                for (j, wr) in wrows.iter().enumerate() {
                    let col = r % q;
                    wgt *= wr[col];
                    es += erows[j][col];
                    r /= q;
                }
                sw += wgt;
                sp += wgt * phi[idx];
                se += wgt * es;
                let nd = dis[idx] as f64;
                if (dis[idx] as usize) < q {
                    si += wgt;
                }
                su += wgt * (qf - nd) / qf;
            });
        } else {
            for_each_nb_config(q, qi, &wrows, |idx, _s, rank| {
                let mut wgt = wphi[idx];
                let mut r = rank;
                for wr in &wrows {
                    wgt *= wr[r % q];
                    r /= q;
                }
                sw += wgt;
                sp += wgt * phi[idx];
                let nd = dis[idx] as f64;
                if (dis[idx] as usize) < q {
                    si += wgt;
                }
                su += wgt * (qf - nd) / qf;
            });
        }
        bw[qi] = sw;
        bp[qi] = sp;
        be[qi] = se;
        bi[qi] = si;
        bu[qi] = su;
    }

    let base = shifts.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut tot = 0.0;
    let mut moments = vec![0.0; q];
    let mut e_local = 0.0;
    let mut e_aux = 0.0;
    let mut incom = 0.0;
    let mut unsat = 0.0;
    for qi in 0..q {
        let r = (-beta * (shifts[qi] - base)).exp();
        moments[qi] = r * bw[qi];
        tot += r * bw[qi];
        e_local += r * bp[qi];
        e_aux += r * be[qi];
        incom += r * bi[qi];
        unsat += r * bu[qi];
    }
    debug_assert!(tot > 0.0 && tot.is_finite());
    for mq in moments.iter_mut() {
        *mq /= tot;
    }
    NodeTrace {
        free_energy: base + phi_min - temp * tot.ln(),
        e_local: e_local / tot,
        e_aux: e_aux / tot,
        s_term: 0.0,
        moments,
        incom: incom / tot,
        unsat: unsat / tot,
    }
}

/// Zero-temperature neighbourhood trace: the minimisation runs over all
/// colourings of the closed neighbourhood, and averages are weighted by
/// exp(sum of descendant vertex entropies) over the minimising set.
pub fn node_trace_zero(
    ctx: &KernelCtx,
    tol: f64,
    msgs: &[&[f64]],
    entropies: &[&[f64]],
    scratch: &mut MeasureScratch,
) -> NodeTrace {
    let q = ctx.q();
    let c = msgs.len();
    let m = c + 1;
    let phi = ctx.costs.phi_table(m);
    let dis = ctx.costs.distinct_table(m);
    let qf = q as f64;

    let mut best = f64::INFINITY;
    for qi in 0..q {
        let mut rows: Vec<&[f64]> = Vec::with_capacity(c);
        for t in msgs {
            rows.push(&t[qi * q..(qi + 1) * q]);
        }
        for_each_nb_config(q, qi, &rows, |idx, s, _| {
            let tot = s + phi[idx];
            if tot < best {
                best = tot;
            }
        });
    }

    scratch.ties.clear();
    let mut smax = f64::NEG_INFINITY;
    for qi in 0..q {
        let mut rows: Vec<&[f64]> = Vec::with_capacity(c);
        for t in msgs {
            rows.push(&t[qi * q..(qi + 1) * q]);
        }
        let ties = &mut scratch.ties;
        for_each_nb_config(q, qi, &rows, |idx, s, rank| {
            if s + phi[idx] <= best + tol {
                let mut es = 0.0;
                let mut r = rank;
                for e in entropies {
                    es += e[qi * q + (r % q)];
                    r /= q;
                }
                if es > smax {
                    smax = es;
                }
                ties.push((qi as u32, idx as u32, es));
            }
        });
    }

    let mut tot = 0.0;
    let mut moments = vec![0.0; q];
    let mut e_local = 0.0;
    let mut incom = 0.0;
    let mut unsat = 0.0;
    for &(qi, idx, es) in &scratch.ties {
        let w = (es - smax).exp();
        tot += w;
        moments[qi as usize] += w;
        let idx = idx as usize;
        e_local += w * phi[idx];
        let nd = dis[idx] as f64;
        if (dis[idx] as usize) < q {
            incom += w;
        }
        unsat += w * (qf - nd) / qf;
    }
    debug_assert!(tot > 0.0);
    for mq in moments.iter_mut() {
        *mq /= tot;
    }
    NodeTrace {
        free_energy: best,
        e_local: e_local / tot,
        e_aux: 0.0,
        s_term: smax + tot.ln(),
        moments,
        incom: incom / tot,
        unsat: unsat / tot,
    }
}

/// Finite-temperature link trace: `T ln Tr_{a,b} exp(-beta (f_i(a,b) +
/// f_j(b,a)))`, and optionally the Boltzmann-weighted mean of the two
/// vertex energies for the global-energy link term.
pub fn link_trace_finite(
    q: usize,
    beta: f64,
    temp: f64,
    mi: &[f64],
    mj: &[f64],
    energies: Option<(&[f64], &[f64])>,
) -> (f64, f64) {
    let mut acc = LogSumExp::new();
    for a in 0..q {
        for b in 0..q {
            acc.add(-beta * (mi[a * q + b] + mj[b * q + a]));
        }
    }
    let lse = acc.value();
    let mut e_link = 0.0;
    if let Some((ei, ej)) = energies {
        let mut tot = 0.0;
        for a in 0..q {
            for b in 0..q {
                let w = (-beta * (mi[a * q + b] + mj[b * q + a]) - lse).exp();
                tot += w;
                e_link += w * (ei[a * q + b] + ej[b * q + a]);
            }
        }
        e_link /= tot;
    }
    (temp * lse, e_link)
}

/// Zero-temperature link trace: the minimum of `f_i(a,b) + f_j(b,a)` and
/// the ln-sum of exp(entropy sums) over the minimising pairs.
pub fn link_trace_zero(
    q: usize,
    tol: f64,
    mi: &[f64],
    mj: &[f64],
    si: &[f64],
    sj: &[f64],
) -> (f64, f64) {
    let mut best = f64::INFINITY;
    for a in 0..q {
        for b in 0..q {
            let v = mi[a * q + b] + mj[b * q + a];
            if v < best {
                best = v;
            }
        }
    }
    let mut acc = LogSumExp::new();
    for a in 0..q {
        for b in 0..q {
            if mi[a * q + b] + mj[b * q + a] <= best + tol {
                acc.add(si[a * q + b] + sj[b * q + a]);
            }
        }
    }
    (best, acc.value())
}

/// Options for one measurement epoch.
#[derive(Clone, Copy, Debug)]
pub struct MeasureOpts {
    pub n_test: usize,
    pub epoch: u64,
}

/// Measure every ensemble observable on a frozen population snapshot.
///
/// Draws `n_test` test nodes (connectivity from the node distribution,
/// neighbours from the excess distribution), keeps the usage multiset, then
/// draws the link pairs from exactly that multiset.
pub fn measure_population(
    view: &PopView,
    opts: MeasureOpts,
    rng: &mut ChaCha8Rng,
) -> Result<ObservableRecord> {
    let q = view.params().q;
    let zero_t = view.params().temperature.is_zero();
    if zero_t && view.entropy.is_none() {
        return Err(Error::Config(
            "zero-temperature measurement requires entropy tables".into(),
        ));
    }
    let (beta, temp) = match view.params().temperature {
        Temperature::Finite(t) => (1.0 / t, t),
        Temperature::Zero => (f64::INFINITY, 0.0),
    };

    let mut scratch = MeasureScratch::new();
    let mut usage: Vec<u32> = Vec::with_capacity(opts.n_test * 4);
    let mut node_f = 0.0;
    let mut node_e_aux = 0.0;
    let mut node_s = 0.0;
    let mut e_local = 0.0;
    let mut q_ea_sum = 0.0;
    let mut incom_sum = 0.0;
    let mut unsat_sum = 0.0;
    let mut incom_by_c = [0.0f64; 2];
    let mut count_by_c = [0usize; 2];
    let mut histogram = vec![0u32; HIST_BINS];
    let inv_q = 1.0 / q as f64;

    let mut n_test = 0usize;
    // keep drawing until the requested count is reached and the usage
    // multiset has even size, so every usage can be paired in the link term
    while n_test < opts.n_test || usage.len() % 2 == 1 {
        let c = view
            .ensemble
            .sample_connectivity(crate::model::Side::Node, rng);
        scratch.rows.clear();
        for _ in 0..c {
            let k = view.draw_excess(rng);
            usage.push(k as u32);
            scratch.rows.push(k);
        }
        let msgs: Vec<&[f64]> = scratch.rows.iter().map(|&k| view.table(k)).collect();
        let trace = if zero_t {
            let ents: Vec<&[f64]> = scratch
                .rows
                .iter()
                .map(|&k| view.entropy_table(k).unwrap())
                .collect();
            node_trace_zero(view.ctx, crate::message::MIN_TOL, &msgs, &ents, &mut scratch)
        } else {
            let ens: Option<Vec<&[f64]>> = view.energy.map(|_| {
                scratch
                    .rows
                    .iter()
                    .map(|&k| view.energy_table(k).unwrap())
                    .collect()
            });
            node_trace_finite(view.ctx, beta, temp, &msgs, ens.as_deref(), &mut scratch)
        };

        node_f += trace.free_energy;
        node_e_aux += trace.e_aux;
        node_s += trace.s_term;
        e_local += trace.e_local;
        incom_sum += trace.incom;
        unsat_sum += trace.unsat;
        let class = if c == view.ensemble.floor_c { 0 } else { 1 };
        incom_by_c[class] += trace.incom;
        count_by_c[class] += 1;
        let mut dev = 0.0;
        for &mq in &trace.moments {
            dev += (mq - inv_q) * (mq - inv_q);
            let bin = ((mq * HIST_BINS as f64) as usize).min(HIST_BINS - 1);
            histogram[bin] += 1;
        }
        q_ea_sum += dev;
        n_test += 1;
    }

    // link pairs from the recorded usage multiset
    usage.shuffle(rng);
    let n_pairs = usage.len() / 2;
    let mut link_f = 0.0;
    let mut link_e = 0.0;
    let mut link_s = 0.0;
    for p in 0..n_pairs {
        let i = usage[2 * p] as usize;
        let j = usage[2 * p + 1] as usize;
        if zero_t {
            let (fmin, slse) = link_trace_zero(
                q,
                crate::message::MIN_TOL,
                view.table(i),
                view.table(j),
                view.entropy_table(i).unwrap(),
                view.entropy_table(j).unwrap(),
            );
            link_f += -fmin;
            link_s += slse;
        } else {
            let epair = match (view.energy_table(i), view.energy_table(j)) {
                (Some(a), Some(b)) => Some((a, b)),
                _ => None,
            };
            let (tln, el) = link_trace_finite(q, beta, temp, view.table(i), view.table(j), epair);
            link_f += tln;
            link_e += el;
        }
    }

    let nt = n_test as f64;
    let f_av = node_f / nt + link_f / nt;
    let e_av_local = e_local / nt;
    let (e_av_global, s_av) = if zero_t {
        (Some(f_av), Some(node_s / nt - link_s / nt))
    } else if view.energy.is_some() {
        let e_global = node_e_aux / nt - link_e / nt;
        (Some(e_global), Some((e_global - f_av) / temp))
    } else {
        (None, None)
    };

    let qf = q as f64;
    Ok(ObservableRecord {
        epoch: opts.epoch,
        mean_c: view.ensemble.mean_connectivity,
        t: view.params().temperature.value(),
        f_av,
        e_av_local,
        e_av_global,
        s_av,
        q_ea: qf / (qf - 1.0) * q_ea_sum / nt,
        f_incom: incom_sum / nt,
        f_incom_by_c: (
            if count_by_c[0] > 0 { incom_by_c[0] / count_by_c[0] as f64 } else { f64::NAN },
            if count_by_c[1] > 0 { incom_by_c[1] / count_by_c[1] as f64 } else { f64::NAN },
        ),
        f_unsat: unsat_sum / nt,
        d: None,
        n_test,
        n_pairs,
        histogram,
    })
}

/// Damage distance between two aligned populations: the mean over shared
/// test nodes of the squared difference of colour moments. Both
/// populations see the identical node and neighbour draws.
pub fn damage_distance(
    a: &PopView,
    b: &PopView,
    n_test: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if a.n != b.n {
        return Err(Error::Input(format!(
            "population size mismatch: {} vs {}",
            a.n, b.n
        )));
    }
    let zero_t = a.params().temperature.is_zero();
    let (beta, temp) = match a.params().temperature {
        Temperature::Finite(t) => (1.0 / t, t),
        Temperature::Zero => (f64::INFINITY, 0.0),
    };
    let mut scratch = MeasureScratch::new();
    let mut total = 0.0;
    for _ in 0..n_test {
        let c = a.ensemble.sample_connectivity(crate::model::Side::Node, rng);
        scratch.rows.clear();
        for _ in 0..c {
            scratch.rows.push(a.draw_excess(rng));
        }
        let trace_of = |view: &PopView, scratch: &mut MeasureScratch| -> NodeTrace {
            let msgs: Vec<&[f64]> = scratch.rows.iter().map(|&k| view.table(k)).collect();
            if zero_t {
                let ents: Vec<&[f64]> = scratch
                    .rows
                    .iter()
                    .map(|&k| view.entropy_table(k).unwrap())
                    .collect();
                node_trace_zero(view.ctx, crate::message::MIN_TOL, &msgs, &ents, scratch)
            } else {
                node_trace_finite(view.ctx, beta, temp, &msgs, None, scratch)
            }
        };
        let ta = trace_of(a, &mut scratch);
        let tb = trace_of(b, &mut scratch);
        total += ta
            .moments
            .iter()
            .zip(&tb.moments)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>();
    }
    Ok(total / n_test as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::message::KernelCtx;

    fn ctx(q: usize, t: Temperature) -> KernelCtx {
        KernelCtx::new(ModelParams::new(q, t, 1.0).unwrap(), 4)
    }

    #[test]
    fn finite_node_trace_normalizes_and_symmetric_moments() {
        let q = 4;
        let kc = ctx(q, Temperature::Finite(1.0));
        let mut scratch = MeasureScratch::new();
        let zero = vec![0.0; q * q];
        let msgs = vec![zero.as_slice(); 3];
        let tr = node_trace_finite(&kc, 1.0, 1.0, &msgs, None, &mut scratch);
        let total: f64 = tr.moments.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        for &m in &tr.moments {
            assert!((m - 0.25).abs() < 1e-12);
        }
        // free energy equals the naive -T ln sum
        let mut naive = 0.0f64;
        let phi = kc.costs.phi_table(4);
        for idx in 0..256 {
            naive += (-(phi[idx])).exp();
        }
        assert!((tr.free_energy - (-(naive.ln()))).abs() < 1e-12);
    }

    #[test]
    fn zero_node_trace_counts_minimisers() {
        // zero tables, c = 3: minimum 4 attained by the 4! proper
        // colourings of the 4-star; uniform moments
        let q = 4;
        let kc = ctx(q, Temperature::Zero);
        let mut scratch = MeasureScratch::new();
        let zero = vec![0.0; q * q];
        let msgs = vec![zero.as_slice(); 3];
        let ents = vec![zero.as_slice(); 3];
        let tr = node_trace_zero(&kc, 1e-9, &msgs, &ents, &mut scratch);
        assert_eq!(tr.free_energy, 4.0);
        assert!((tr.s_term - 24.0f64.ln()).abs() < 1e-12);
        assert_eq!(tr.e_local, 4.0);
        assert_eq!(tr.incom, 0.0);
        assert_eq!(tr.unsat, 0.0);
        for &m in &tr.moments {
            assert!((m - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn links_reduce_to_known_values_on_zero_tables() {
        let q = 4;
        let zero = vec![0.0; q * q];
        let (tln, _) = link_trace_finite(q, 1.0, 1.0, &zero, &zero, None);
        assert!((tln - (16.0f64).ln()).abs() < 1e-12);
        let (fmin, slse) = link_trace_zero(q, 1e-9, &zero, &zero, &zero, &zero);
        assert_eq!(fmin, 0.0);
        assert!((slse - 16.0f64.ln()).abs() < 1e-12);
    }
}
