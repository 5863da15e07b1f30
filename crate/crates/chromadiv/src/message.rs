//! The message kernel: single-node updates of vertex free-energy,
//! vertex-energy, and vertex-entropy tables at finite and zero temperature.
//!
//! A message is a QxQ table `f(a, b)` where `a` is the colour of the
//! ancestor and `b` the colour of the node terminating the subtree. Every
//! update subtracts the (0,0) entry (the computationally simple gauge), so
//! stored tables always have `f(0,0) = 0` and additive drifts cancel in the
//! observables by matched node/link sampling.

use crate::error::{Error, Result};
use crate::math::LogSumExp;
use crate::model::{CostTables, ModelParams, Temperature};
use serde::{Deserialize, Serialize};

/// Absolute tolerance for "attains the zero-temperature minimum". Minimiser
/// membership feeds the entropy recursion, so near-ties within this
/// tolerance are all included.
pub const MIN_TOL: f64 = 1e-9;

/// A QxQ colour table, row-major with the ancestor colour as the row index:
/// entry (a, b) sits at `a * q + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MessageTable {
    q: usize,
    v: Vec<f64>,
}

impl MessageTable {
    pub fn zero(q: usize) -> Self {
        MessageTable { q, v: vec![0.0; q * q] }
    }

    pub fn from_fn(q: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut v = Vec::with_capacity(q * q);
        for a in 0..q {
            for b in 0..q {
                v.push(f(a, b));
            }
        }
        MessageTable { q, v }
    }

    pub fn q(&self) -> usize {
        self.q
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.v[a * self.q + b]
    }

    #[inline]
    pub fn set(&mut self, a: usize, b: usize, x: f64) {
        self.v[a * self.q + b] = x;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.v
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.v
    }

    /// Subtract the (0,0) entry from every cell.
    pub fn gauge_fix(&mut self) {
        let g = self.v[0];
        for x in &mut self.v {
            *x -= g;
        }
    }

    /// Add a constant to every cell (a pure gauge shift).
    pub fn shift(&mut self, c: f64) {
        for x in &mut self.v {
            *x += c;
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.v
            .iter()
            .zip(&other.v)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.v.iter().all(|x| x.is_finite())
    }
}

/// Vertex-energy and (zero-temperature) vertex-entropy companions of a
/// message table. Entropy tables are stored raw, with the same
/// subtract-cell-(0,0) drift control as the free energies; the global
/// average is reconstructed by the observables with matched sampling.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AuxTables {
    pub energy: Option<MessageTable>,
    pub entropy: Option<MessageTable>,
}

/// The descendant colour vectors attaining the zero-temperature minimum in
/// one (a, b) cell, with their summed descendant entropies.
#[derive(Clone, Debug)]
pub struct MinimizerSet {
    pub vectors: Vec<Vec<usize>>,
    pub entropy_sums: Vec<f64>,
    pub min_value: f64,
}

impl MinimizerSet {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// Shared per-run kernel context: cost tables for the model's lambda, plus
/// the per-arity exp(-beta phi) lookup used by the finite-temperature trace.
#[derive(Clone, Debug)]
pub struct KernelCtx {
    pub params: ModelParams,
    pub costs: CostTables,
    pub tol: f64,
    /// exp(-beta (phi - phi_min)) per arity, empty at zero temperature
    wphi: Vec<Vec<f64>>,
    phi_min: Vec<f64>,
    phi_span: Vec<f64>,
}

impl KernelCtx {
    pub fn new(params: ModelParams, max_c: usize) -> Self {
        let max_m = max_c + 1;
        let costs = CostTables::build(params.q, max_m, params.lambda);
        let mut wphi = vec![Vec::new(); max_m + 1];
        let mut phi_min = vec![0.0; max_m + 1];
        let mut phi_span = vec![0.0; max_m + 1];
        for m in 2..=max_m {
            let t = costs.phi_table(m);
            let lo = t.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            phi_min[m] = lo;
            phi_span[m] = hi - lo;
            if let Temperature::Finite(temp) = params.temperature {
                let beta = 1.0 / temp;
                wphi[m] = t.iter().map(|&p| (-beta * (p - lo)).exp()).collect();
            }
        }
        KernelCtx { params, costs, tol: MIN_TOL, wphi, phi_min, phi_span }
    }

    pub fn q(&self) -> usize {
        self.params.q
    }

    /// exp(-beta (phi - phi_min)) lookup for m-element neighbourhoods.
    /// Empty at zero temperature.
    pub fn wphi(&self, m: usize) -> &[f64] {
        &self.wphi[m]
    }

    pub fn phi_min(&self, m: usize) -> f64 {
        self.phi_min[m]
    }

    pub fn phi_span(&self, m: usize) -> f64 {
        self.phi_span[m]
    }

    fn check_descendants(&self, n: usize, c_j: usize) -> Result<()> {
        if c_j < 1 || n + 1 != c_j {
            return Err(Error::Input(format!(
                "expected {} descendants for connectivity {c_j}, got {n}",
                c_j.saturating_sub(1)
            )));
        }
        Ok(())
    }
}

#[inline]
fn row<'a>(t: &'a [f64], q: usize, b: usize) -> &'a [f64] {
    &t[b * q..(b + 1) * q]
}

/// Enumerate descendant colour vectors for one (a, b) cell, calling
/// `visit(phi_index, message_sum, vector_rank)`. `vector_rank` encodes the
/// colours base-q, lowest digit first.
#[inline]
fn for_each_config(
    q: usize,
    a: usize,
    b: usize,
    desc_rows: &[&[f64]],
    mut visit: impl FnMut(usize, f64, usize),
) {
    // phi tuple is (b, a, q_1, ..): index b + a q + sum q_k q^{k+2}
    let base = b + a * q;
    let q2 = q * q;
    match desc_rows.len() {
        1 => {
            let r0 = desc_rows[0];
            let mut idx = base;
            for (c0, &f0) in r0.iter().enumerate() {
                visit(idx, f0, c0);
                idx += q2;
            }
        }
        2 => {
            let r0 = desc_rows[0];
            let r1 = desc_rows[1];
            let q3 = q2 * q;
            for (c1, &f1) in r1.iter().enumerate() {
                let mut idx = base + c1 * q3;
                for (c0, &f0) in r0.iter().enumerate() {
                    visit(idx, f0 + f1, c0 + c1 * q);
                    idx += q2;
                }
            }
        }
        3 => {
            let r0 = desc_rows[0];
            let r1 = desc_rows[1];
            let r2 = desc_rows[2];
            let q3 = q2 * q;
            let q4 = q3 * q;
            for (c2, &f2) in r2.iter().enumerate() {
                for (c1, &f1) in r1.iter().enumerate() {
                    let s12 = f1 + f2;
                    let mut idx = base + c1 * q3 + c2 * q4;
                    let rank12 = (c1 + c2 * q) * q;
                    for (c0, &f0) in r0.iter().enumerate() {
                        visit(idx, f0 + s12, c0 + rank12);
                        idx += q2;
                    }
                }
            }
        }
        n => {
            // generic odometer for higher arities
            let total = q.pow(n as u32);
            let mut digits = vec![0usize; n];
            for rank in 0..total {
                let s: f64 = desc_rows
                    .iter()
                    .zip(&digits)
                    .map(|(r, &d)| r[d])
                    .sum();
                let mut idx = base;
                let mut mult = q2;
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

/// Decode a configuration rank back into descendant colours.
fn decode_rank(q: usize, arity: usize, mut rank: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(arity);
    for _ in 0..arity {
        out.push(rank % q);
        rank /= q;
    }
    out
}

pub(crate) struct ZeroOutputs<'a> {
    pub msg: &'a mut [f64],
    pub entropy: &'a mut [f64],
    /// minimiser multiplicity per cell, when requested
    pub counts: Option<&'a mut [u32]>,
}

/// Zero-temperature update of one node: per cell, the minimum over
/// descendant colours of (sum of descendant messages + phi), and the raw
/// ln-sum of exp(descendant entropy sums) over the minimising set. Both
/// outputs are gauge-fixed by their (0,0) cell.
pub(crate) fn zero_update_raw(
    q: usize,
    phi: &[f64],
    tol: f64,
    descs: &[&[f64]],
    ents: &[&[f64]],
    out: &mut ZeroOutputs,
) {
    let mut rows: Vec<&[f64]> = Vec::with_capacity(descs.len());
    let mut erows: Vec<&[f64]> = Vec::with_capacity(descs.len());
    for a in 0..q {
        for b in 0..q {
            rows.clear();
            erows.clear();
            for d in descs {
                rows.push(row(d, q, b));
            }
            for e in ents {
                erows.push(row(e, q, b));
            }
            let mut best = f64::INFINITY;
            for_each_config(q, a, b, &rows, |idx, s, _| {
                let tot = s + phi[idx];
                if tot < best {
                    best = tot;
                }
            });
            let mut acc = LogSumExp::new();
            let mut count = 0u32;
            let erows_ref = &erows;
            for_each_config(q, a, b, &rows, |idx, s, rank| {
                if s + phi[idx] <= best + tol {
                    count += 1;
                    let mut es = 0.0;
                    let mut r = rank;
                    for e in erows_ref {
                        es += e[r % q];
                        r /= q;
                    }
                    acc.add(es);
                }
            });
            let cell = a * q + b;
            out.msg[cell] = best;
            out.entropy[cell] = acc.value();
            if let Some(c) = out.counts.as_deref_mut() {
                c[cell] = count;
            }
        }
    }
    let g = out.msg[0];
    out.msg.iter_mut().for_each(|x| *x -= g);
    let ge = out.entropy[0];
    out.entropy.iter_mut().for_each(|x| *x -= ge);
}

/// Finite-temperature update of one node: per cell,
/// `-T ln Tr exp[-beta (sum_k f_k(b, q_k) + phi(a, b, q))]`, evaluated with
/// row-minimum shifts so nothing overflows for beta up to at least 50.
/// Optionally accumulates the Boltzmann-weighted vertex-energy update in the
/// same pass. Both outputs are gauge-fixed by their (0,0) cell.
pub(crate) fn finite_update_raw(
    q: usize,
    beta: f64,
    temp: f64,
    phi: &[f64],
    wphi: &[f64],
    phi_min: f64,
    phi_span: f64,
    descs: &[&[f64]],
    energy_in: Option<&[&[f64]]>,
    out: &mut [f64],
    energy_out: Option<&mut [f64]>,
    scratch: &mut Vec<f64>,
) {
    let k = descs.len();
    // row-shifted weights: w_k[b][c] = exp(-beta (f_k(b,c) - min_c f_k(b,c)))
    scratch.clear();
    scratch.resize(k * q * q + k * q, 0.0);
    let (w, rowmin) = scratch.split_at_mut(k * q * q);
    let mut span = phi_span;
    for (i, d) in descs.iter().enumerate() {
        let mut worst = 0.0f64;
        for b in 0..q {
            let r = row(d, q, b);
            let lo = r.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            worst = worst.max(hi - lo);
            rowmin[i * q + b] = lo;
            for (c, &f) in r.iter().enumerate() {
                w[(i * q + b) * q + c] = (-beta * (f - lo)).exp();
            }
        }
        span += worst;
    }

    let mut e_rows: Vec<&[f64]> = Vec::new();
    let mut rows: Vec<&[f64]> = Vec::with_capacity(k);
    let mut wrows: Vec<&[f64]> = Vec::with_capacity(k);
    let mut e_out_local = vec![0.0; if energy_out.is_some() { q * q } else { 0 }];

    if beta * span < 600.0 {
        // fast path: shifted products cannot underflow to a hard zero
        for a in 0..q {
            for b in 0..q {
                wrows.clear();
                for i in 0..k {
                    wrows.push(&w[(i * q + b) * q..(i * q + b + 1) * q]);
                }
                let shift: f64 = (0..k).map(|i| rowmin[i * q + b]).sum();
                let mut tot = 0.0;
                if let Some(eins) = energy_in {
                    e_rows.clear();
                    for e in eins {
                        e_rows.push(row(e, q, b));
                    }
                    let mut etot = 0.0;
                    let e_rows_ref = &e_rows;
                    for_each_config(q, a, b, &wrows, |idx, _unused, rank| {
                        let mut wgt = wphi[idx];
                        let mut es = phi[idx];
                        let mut r = rank;
                        for (i, wr) in wrows.iter().enumerate() {
                            let c = r % q;
                            wgt *= wr[c];
                            es += e_rows_ref[i][c];
                            r /= q;
                        }
                        tot += wgt;
                        etot += wgt * es;
                    });
                    e_out_local[a * q + b] = etot / tot;
                } else {
                    for_each_config(q, a, b, &wrows, |idx, _unused, rank| {
                        let mut wgt = wphi[idx];
                        let mut r = rank;
                        for wr in &wrows {
                            wgt *= wr[r % q];
                            r /= q;
                        }
                        tot += wgt;
                    });
                }
                out[a * q + b] = shift + phi_min - temp * tot.ln();
            }
        }
    } else {
        // per-cell max-shift for extreme beta or wild tables
        for a in 0..q {
            for b in 0..q {
                rows.clear();
                for d in descs {
                    rows.push(row(d, q, b));
                }
                let mut best = f64::INFINITY;
                for_each_config(q, a, b, &rows, |idx, s, _| {
                    let tot = s + phi[idx];
                    if tot < best {
                        best = tot;
                    }
                });
                let mut tot = 0.0;
                let mut etot = 0.0;
                if let Some(eins) = energy_in {
                    e_rows.clear();
                    for e in eins {
                        e_rows.push(row(e, q, b));
                    }
                }
                let e_rows_ref = &e_rows;
                for_each_config(q, a, b, &rows, |idx, s, rank| {
                    let wgt = (-beta * (s + phi[idx] - best)).exp();
                    tot += wgt;
                    if energy_in.is_some() {
                        let mut es = phi[idx];
                        let mut r = rank;
                        for er in e_rows_ref {
                            es += er[r % q];
                            r /= q;
                        }
                        etot += wgt * es;
                    }
                });
                out[a * q + b] = best - temp * tot.ln();
                if energy_out.is_some() {
                    e_out_local[a * q + b] = etot / tot;
                }
            }
        }
    }

    let g = out[0];
    out.iter_mut().for_each(|x| *x -= g);
    if let Some(eo) = energy_out {
        let ge = e_out_local[0];
        for (o, &x) in eo.iter_mut().zip(&e_out_local) {
            *o = x - ge;
        }
    }
}

fn slices<'a>(tables: &'a [&MessageTable]) -> Vec<&'a [f64]> {
    tables.iter().map(|t| t.as_slice()).collect()
}

/// Finite-temperature message update for a node of connectivity `c_j` from
/// its `c_j - 1` descendant messages. Gauge-fixed output.
pub fn update_message_finite_t(
    descendants: &[&MessageTable],
    c_j: usize,
    ctx: &KernelCtx,
) -> Result<MessageTable> {
    ctx.check_descendants(descendants.len(), c_j)?;
    let temp = match ctx.params.temperature {
        Temperature::Finite(t) => t,
        Temperature::Zero => {
            return Err(Error::Input("finite-temperature update called in zero-T mode".into()))
        }
    };
    let q = ctx.q();
    let m = c_j + 1;
    let mut out = MessageTable::zero(q);
    let mut scratch = Vec::new();
    finite_update_raw(
        q,
        1.0 / temp,
        temp,
        ctx.costs.phi_table(m),
        &ctx.wphi[m],
        ctx.phi_min[m],
        ctx.phi_span[m],
        &slices(descendants),
        None,
        out.as_mut_slice(),
        None,
        &mut scratch,
    );
    Ok(out)
}

/// Vertex-energy update: the Boltzmann-weighted average (under the
/// descendant messages) of the descendant energies plus the local cost,
/// shifted by `e_av_shift` and gauge-fixed. The gauge subtraction makes the
/// shift a no-op on the stored table; it is accepted for interface
/// completeness.
pub fn update_energy_table(
    descendant_messages: &[&MessageTable],
    descendant_energies: &[&MessageTable],
    c_j: usize,
    ctx: &KernelCtx,
    e_av_shift: f64,
) -> Result<MessageTable> {
    ctx.check_descendants(descendant_messages.len(), c_j)?;
    if descendant_energies.len() != descendant_messages.len() {
        return Err(Error::Input(format!(
            "got {} energy tables for {} messages",
            descendant_energies.len(),
            descendant_messages.len()
        )));
    }
    let temp = match ctx.params.temperature {
        Temperature::Finite(t) => t,
        Temperature::Zero => {
            return Err(Error::Input("energy tables are a finite-temperature object".into()))
        }
    };
    let q = ctx.q();
    let m = c_j + 1;
    let mut msg = MessageTable::zero(q);
    let mut energy = MessageTable::zero(q);
    let mut scratch = Vec::new();
    finite_update_raw(
        q,
        1.0 / temp,
        temp,
        ctx.costs.phi_table(m),
        &ctx.wphi[m],
        ctx.phi_min[m],
        ctx.phi_span[m],
        &slices(descendant_messages),
        Some(&slices(descendant_energies)),
        msg.as_mut_slice(),
        Some(energy.as_mut_slice()),
        &mut scratch,
    );
    energy.shift(-e_av_shift);
    energy.gauge_fix();
    Ok(energy)
}

/// Zero-temperature message update, returning the gauge-fixed table of
/// minima together with the full minimiser set of every cell.
pub fn update_message_zero_t(
    descendants: &[&MessageTable],
    c_j: usize,
    ctx: &KernelCtx,
) -> Result<(MessageTable, Vec<MinimizerSet>)> {
    ctx.check_descendants(descendants.len(), c_j)?;
    let q = ctx.q();
    let m = c_j + 1;
    let phi = ctx.costs.phi_table(m);
    let ds = slices(descendants);
    let arity = c_j - 1;
    let mut out = MessageTable::zero(q);
    let mut sets = Vec::with_capacity(q * q);
    let mut rows: Vec<&[f64]> = Vec::with_capacity(arity);
    for a in 0..q {
        for b in 0..q {
            rows.clear();
            for d in &ds {
                rows.push(row(d, q, b));
            }
            let mut best = f64::INFINITY;
            for_each_config(q, a, b, &rows, |idx, s, _| {
                best = best.min(s + phi[idx]);
            });
            let mut vectors = Vec::new();
            let mut esums = Vec::new();
            for_each_config(q, a, b, &rows, |idx, s, rank| {
                if s + phi[idx] <= best + ctx.tol {
                    vectors.push(decode_rank(q, arity, rank));
                    esums.push(0.0);
                }
            });
            out.set(a, b, best);
            sets.push(MinimizerSet { vectors, entropy_sums: esums, min_value: best });
        }
    }
    out.gauge_fix();
    Ok((out, sets))
}

/// Zero-temperature entropy update: the raw `ln sum exp` of descendant
/// entropy sums over each cell's minimising set, drift-controlled by the
/// same (0,0) gauge as the free energies. The global entropy subtraction is
/// deferred to the observables.
pub fn update_entropy_table_zero_t(
    descendant_messages: &[&MessageTable],
    descendant_entropies: &[&MessageTable],
    c_j: usize,
    ctx: &KernelCtx,
) -> Result<MessageTable> {
    ctx.check_descendants(descendant_messages.len(), c_j)?;
    if descendant_entropies.len() != descendant_messages.len() {
        return Err(Error::Input(format!(
            "got {} entropy tables for {} messages",
            descendant_entropies.len(),
            descendant_messages.len()
        )));
    }
    if !ctx.params.temperature.is_zero() {
        return Err(Error::Input("entropy tables are a zero-temperature object".into()));
    }
    let q = ctx.q();
    let m = c_j + 1;
    let mut msg = vec![0.0; q * q];
    let mut ent = MessageTable::zero(q);
    let mut outs = ZeroOutputs { msg: &mut msg, entropy: ent.as_mut_slice(), counts: None };
    zero_update_raw(
        q,
        ctx.costs.phi_table(m),
        ctx.tol,
        &slices(descendant_messages),
        &slices(descendant_entropies),
        &mut outs,
    );
    if !ent.is_finite() {
        return Err(Error::Numeric("empty minimiser set in entropy update".into()));
    }
    Ok(ent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::kahan_sum;
    use crate::model::Neighbourhood;
    use crate::rng::{stream, Domain};
    use rand::Rng;

    fn ctx(q: usize, t: Temperature) -> KernelCtx {
        KernelCtx::new(ModelParams::new(q, t, 1.0).unwrap(), 4)
    }

    fn zero_tables(q: usize, n: usize) -> Vec<MessageTable> {
        (0..n).map(|_| MessageTable::zero(q)).collect()
    }

    fn refs(ts: &[MessageTable]) -> Vec<&MessageTable> {
        ts.iter().collect()
    }

    #[test]
    fn zero_t_from_zero_tables_has_gap_two() {
        let c = ctx(4, Temperature::Zero);
        let ds = zero_tables(4, 2);
        let (out, sets) = update_message_zero_t(&refs(&ds), 3, &c).unwrap();
        // raw minima are 6 on the diagonal and 4 off it; the (0,0) gauge
        // leaves diag 0 and off-diagonal -2, so the gap f(a,a)-f(a,b) is 2
        for a in 0..4 {
            for b in 0..4 {
                let expect = if a == b { 0.0 } else { -2.0 };
                assert!((out.get(a, b) - expect).abs() < 1e-12, "cell {a},{b}");
                assert!((out.get(a, a) - out.get(a, (a + 1) % 4) - 2.0).abs() < 1e-12);
                let set = &sets[a * 4 + b];
                assert_eq!(set.len(), if a == b { 6 } else { 2 });
                assert!((set.min_value - if a == b { 6.0 } else { 4.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_t_entropy_from_zero_tables() {
        let c = ctx(4, Temperature::Zero);
        let ds = zero_tables(4, 2);
        let ent = update_entropy_table_zero_t(&refs(&ds), &refs(&ds), 3, &c).unwrap();
        // raw entries ln 6 on the diagonal and ln 2 off it; the stored table
        // is gauged by cell (0,0)
        for a in 0..4 {
            for b in 0..4 {
                let raw = if a == b { 6.0f64 } else { 2.0 };
                assert!((ent.get(a, b) - (raw.ln() - 6.0f64.ln())).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unique_minimizer_gives_zero_raw_entropy() {
        // descendant tables that make every cell's minimiser unique
        let q = 4;
        let c = ctx(q, Temperature::Zero);
        // irrational per-colour increments so no two configurations tie
        let d0 = MessageTable::from_fn(q, |_, b| (b as f64) * 0.9 * std::f64::consts::SQRT_2);
        let d1 = MessageTable::from_fn(q, |_, b| (b as f64) * 0.7 * 3f64.sqrt());
        let (_, sets) = update_message_zero_t(&[&d0, &d1], 3, &c).unwrap();
        if sets.iter().all(|s| s.len() == 1) {
            let z = MessageTable::zero(q);
            let ent =
                update_entropy_table_zero_t(&[&d0, &d1], &[&z, &z], 3, &c).unwrap();
            for a in 0..q {
                for b in 0..q {
                    assert!(ent.get(a, b).abs() < 1e-12);
                }
            }
        } else {
            panic!("expected unique minimisers for these inputs");
        }
    }

    #[test]
    fn near_ties_within_tolerance_are_included() {
        let q = 4;
        let c = ctx(q, Temperature::Zero);
        // two configurations differing by less than the tolerance
        let mut d0 = MessageTable::zero(q);
        d0.set(0, 1, 5e-10);
        let d1 = MessageTable::zero(q);
        let (_, sets) = update_message_zero_t(&[&d0, &d1], 3, &c).unwrap();
        // cell (1,0): minimisers still include configs using colour 1 from d0
        assert!(sets[4].len() >= 2);
    }

    #[test]
    fn finite_t_zero_tables_reference_ratio() {
        // c_j = 3, Q = 4, zero descendant tables, T = 1: the symmetric ratio
        // exp(-(f(a,a) - f(a,b))/T), frozen from an independent enumeration
        let c = ctx(4, Temperature::Finite(1.0));
        let ds = zero_tables(4, 2);
        let out = update_message_finite_t(&refs(&ds), 3, &c).unwrap();
        let z = (-(out.get(0, 0) - out.get(0, 1))).exp();
        assert!((z - 0.259750350224772).abs() < 1e-12, "z = {z}");
        // colour symmetry of the output
        for a in 0..4 {
            for b in 0..4 {
                let expect = if a == b { out.get(0, 0) } else { out.get(0, 1) };
                assert!((out.get(a, b) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gauge_invariance_of_both_kernels() {
        let mut rng = stream(3, Domain::Instance, 2);
        let q = 4;
        let mk = |rng: &mut rand_chacha::ChaCha8Rng| {
            MessageTable::from_fn(q, |_, _| rng.gen_range(-2.0..2.0))
        };
        for _ in 0..20 {
            let d: Vec<MessageTable> = (0..3).map(|_| mk(&mut rng)).collect();
            let mut shifted = d.clone();
            for t in &mut shifted {
                t.shift(rng.gen_range(-5.0..5.0));
            }
            let cf = ctx(q, Temperature::Finite(0.7));
            let a = update_message_finite_t(&refs(&d), 4, &cf).unwrap();
            let b = update_message_finite_t(&refs(&shifted), 4, &cf).unwrap();
            assert!(a.max_abs_diff(&b) < 1e-9, "finite-T gauge drift {}", a.max_abs_diff(&b));

            let cz = ctx(q, Temperature::Zero);
            let (az, _) = update_message_zero_t(&refs(&d), 4, &cz).unwrap();
            let (bz, _) = update_message_zero_t(&refs(&shifted), 4, &cz).unwrap();
            assert!(az.max_abs_diff(&bz) < 1e-9);
        }
    }

    #[test]
    fn colour_permutation_equivariance() {
        let mut rng = stream(5, Domain::Instance, 3);
        let q = 4;
        let perm = [2usize, 3, 1, 0];
        for _ in 0..10 {
            let d: Vec<MessageTable> =
                (0..2).map(|_| MessageTable::from_fn(q, |_, _| rng.gen_range(-1.0..1.0))).collect();
            let dp: Vec<MessageTable> = d
                .iter()
                .map(|t| MessageTable::from_fn(q, |a, b| t.get(perm[a], perm[b])))
                .collect();
            let cf = ctx(q, Temperature::Finite(0.9));
            let o = update_message_finite_t(&refs(&d), 3, &cf).unwrap();
            let op = update_message_finite_t(&refs(&dp), 3, &cf).unwrap();
            // equal up to the gauge cell: compare cell differences
            for a in 0..q {
                for b in 0..q {
                    let lhs = op.get(a, b) - op.get(1, 0);
                    let rhs = o.get(perm[a], perm[b]) - o.get(perm[1], perm[0]);
                    assert!((lhs - rhs).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn finite_t_agrees_with_naive_kahan_trace() {
        let mut rng = stream(8, Domain::Instance, 4);
        let q = 4;
        for case in 0..25 {
            let c_j = if case % 2 == 0 { 3 } else { 4 };
            let temp = rng.gen_range(0.3..1.2);
            let d: Vec<MessageTable> = (0..c_j - 1)
                .map(|_| MessageTable::from_fn(q, |_, _| rng.gen_range(-3.0..3.0)))
                .collect();
            let cf = ctx(q, Temperature::Finite(temp));
            let out = update_message_finite_t(&refs(&d), c_j, &cf).unwrap();
            // naive trace in compensated arithmetic
            let beta = 1.0 / temp;
            let mut naive = MessageTable::zero(q);
            for a in 0..q {
                for b in 0..q {
                    let mut terms = Vec::new();
                    for rank in 0..q.pow((c_j - 1) as u32) {
                        let cols = decode_rank(q, c_j - 1, rank);
                        let s: f64 =
                            cols.iter().enumerate().map(|(k, &col)| d[k].get(b, col)).sum();
                        let mut nbs = vec![a];
                        nbs.extend(&cols);
                        let p = crate::model::phi(&Neighbourhood::new(b, nbs), q).unwrap();
                        terms.push((-beta * (s + p as f64)).exp());
                    }
                    naive.set(a, b, -temp * kahan_sum(terms).ln());
                }
            }
            naive.gauge_fix();
            let rel = (0..q * q)
                .map(|i| {
                    let x = out.as_slice()[i];
                    let y = naive.as_slice()[i];
                    (x - y).abs() / y.abs().max(1.0)
                })
                .fold(0.0, f64::max);
            assert!(rel < 1e-12, "rel err {rel}");
        }
    }

    #[test]
    fn finite_t_matches_zero_t_at_large_beta() {
        // at beta = 30 the finite-T cell equals (min - T ln multiplicity) up
        // to terms suppressed by the smallest integer gap
        let mut rng = stream(13, Domain::Instance, 5);
        let q = 4;
        let beta = 30.0;
        for _ in 0..20 {
            let d: Vec<MessageTable> = (0..2)
                .map(|_| MessageTable::from_fn(q, |_, _| rng.gen_range(0..6) as f64))
                .collect();
            let cz = ctx(q, Temperature::Zero);
            let (mz, sets) = update_message_zero_t(&refs(&d), 3, &cz).unwrap();
            let cf = ctx(q, Temperature::Finite(1.0 / beta));
            let mf = update_message_finite_t(&refs(&d), 3, &cf).unwrap();
            let t = 1.0 / beta;
            let pred_gauge = mz.get(0, 0) - t * (sets[0].len() as f64).ln();
            for a in 0..q {
                for b in 0..q {
                    let pred =
                        mz.get(a, b) - t * (sets[a * q + b].len() as f64).ln() - pred_gauge;
                    assert!(
                        (mf.get(a, b) - pred).abs() < 10.0 * (-beta).exp(),
                        "cell ({a},{b}): finite {} vs predicted {pred}",
                        mf.get(a, b)
                    );
                }
            }
        }
    }

    #[test]
    fn energy_table_reference_values() {
        // c_j = 3, zero message and energy tables, T = 1: every cell is a
        // 16-term weighted mean; frozen from an independent enumeration
        let c = ctx(4, Temperature::Finite(1.0));
        let ds = zero_tables(4, 2);
        let e = update_energy_table(&refs(&ds), &refs(&ds), 3, &c, 0.0).unwrap();
        assert!((e.get(0, 0) - 0.0).abs() < 1e-12);
        assert!((e.get(0, 1) - (-1.342952873440291)).abs() < 1e-12);
        assert!((e.get(1, 0) - (-1.342952873440291)).abs() < 1e-12);
        assert!((e.get(1, 1) - 0.0).abs() < 1e-12);
    }

    #[test]
    fn energy_table_uniform_weight_limit() {
        // T very large: each raw entry tends to the unweighted mean of phi
        let q = 4;
        let c = ctx(q, Temperature::Finite(1e5));
        let ds = zero_tables(q, 2);
        let e = update_energy_table(&refs(&ds), &refs(&ds), 3, &c, 0.0).unwrap();
        let phi_t = c.costs.phi_table(4);
        let mean = |a: usize, b: usize| -> f64 {
            let mut s = 0.0;
            for r in 0..16 {
                let idx = b + a * q + (r % 4) * q * q + (r / 4) * q * q * q;
                s += phi_t[idx];
            }
            s / 16.0
        };
        for a in 0..q {
            for b in 0..q {
                let expect = mean(a, b) - mean(0, 0);
                assert!((e.get(a, b) - expect).abs() < 1e-3, "cell {a},{b}");
            }
        }
    }

    #[test]
    fn energy_update_matches_beta_derivative() {
        // with descendant energies set equal to the (beta-independent)
        // descendant messages, the energy update is d(beta f)/d(beta)
        let mut rng = stream(21, Domain::Instance, 6);
        let q = 4;
        for case in 0..20 {
            let c_j = if case % 2 == 0 { 3 } else { 4 };
            let temp: f64 = rng.gen_range(0.4..1.2);
            let d: Vec<MessageTable> = (0..c_j - 1)
                .map(|_| MessageTable::from_fn(q, |_, _| rng.gen_range(-2.0..2.0)))
                .collect();
            let beta = 1.0 / temp;
            let h = 1e-4;
            let cf = ctx(q, Temperature::Finite(temp));
            let cp = ctx(q, Temperature::Finite(1.0 / (beta + h)));
            let cm = ctx(q, Temperature::Finite(1.0 / (beta - h)));
            let e = update_energy_table(&refs(&d), &refs(&d), c_j, &cf, 0.0).unwrap();
            let fp = update_message_finite_t(&refs(&d), c_j, &cp).unwrap();
            let fm = update_message_finite_t(&refs(&d), c_j, &cm).unwrap();
            for a in 0..q {
                for b in 0..q {
                    // gauged tables differentiate to gauged energies
                    let fd = ((beta + h) * fp.get(a, b) - (beta - h) * fm.get(a, b)) / (2.0 * h);
                    let rel = (e.get(a, b) - fd).abs() / fd.abs().max(1.0);
                    assert!(rel < 1e-6, "cell ({a},{b}) rel {rel}");
                }
            }
        }
    }

    #[test]
    fn wrong_descendant_count_is_rejected() {
        let c = ctx(4, Temperature::Finite(1.0));
        let ds = zero_tables(4, 3);
        assert!(update_message_finite_t(&refs(&ds), 3, &c).is_err());
        let cz = ctx(4, Temperature::Zero);
        assert!(update_message_zero_t(&refs(&ds), 3, &cz).is_err());
    }

    #[test]
    fn extreme_beta_routes_through_safe_path() {
        // tables with a large spread at beta = 50 must stay finite
        let q = 4;
        let c = ctx(q, Temperature::Finite(0.02));
        let d: Vec<MessageTable> =
            (0..3).map(|i| MessageTable::from_fn(q, |a, b| ((a + 2 * b + i) % 7) as f64 * 12.0)).collect();
        let out = update_message_finite_t(&refs(&d), 4, &c).unwrap();
        assert!(out.is_finite());
    }
}
