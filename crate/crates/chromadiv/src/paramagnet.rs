//! The colour-symmetric (paramagnetic) solutions: scalar ratio recursions,
//! their zero-temperature limits, the population over scalar ratios, the
//! closed-form free energy and energy, the zero-temperature entropy, a
//! generic full-table reduction for the interpolated model, and the
//! zero-entropy root finders.
//!
//! The scalar per message is `z = exp(-beta (f(a,a) - f(a,b)))`; a
//! colour-symmetric table carries no other information.

use crate::error::{Error, Result};
use crate::message::{update_message_finite_t, KernelCtx, MessageTable};
use crate::model::{EnsembleSpec, ModelParams, Side, Temperature};
use crate::observables::{link_trace_finite, node_trace_finite, MeasureScratch};
use crate::rng::{stream, Domain};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn q_n(q: usize, n: usize) -> f64 {
    q as f64 - n as f64
}

/// One step of the scalar ratio recursion for a node of connectivity 3 or
/// 4. At finite temperature these are the rational maps in powers of
/// exp(-beta); at zero temperature (Q = 4 only) the connectivity-3 map is
/// identically 0 and the connectivity-4 map is (Q-1)/(6 + sum of inputs).
pub fn z_update(inputs: &[f64], c_j: usize, params: &ModelParams) -> Result<f64> {
    if inputs.len() + 1 != c_j {
        return Err(Error::Input(format!(
            "connectivity {c_j} needs {} inputs, got {}",
            c_j - 1,
            inputs.len()
        )));
    }
    if inputs.iter().any(|&z| z < 0.0 || !z.is_finite()) {
        return Err(Error::Input("ratio inputs must be finite and nonnegative".into()));
    }
    let q = params.q;
    match params.temperature {
        Temperature::Zero => {
            if q != 4 {
                return Err(Error::Input(
                    "the zero-temperature scalar reduction is implemented for Q = 4".into(),
                ));
            }
            match c_j {
                3 => Ok(0.0),
                4 => Ok(q_n(q, 1) / (6.0 + inputs.iter().sum::<f64>())),
                _ => Err(Error::Input(format!("no scalar recursion for connectivity {c_j}"))),
            }
        }
        Temperature::Finite(t) => {
            let z = (-1.0 / t).exp();
            let (q1, q2, q3, q4) = (q_n(q, 1), q_n(q, 2), q_n(q, 3), q_n(q, 4));
            match c_j {
                3 => {
                    let (za, zb) = (inputs[0], inputs[1]);
                    let e1 = za + zb;
                    let e2 = za * zb;
                    let num = q1 * q2 + q1 * z.powi(2) + q1 * z.powi(4) * e1 + z.powi(10) * e2;
                    let den = q2 * q3
                        + 3.0 * q2 * z.powi(2)
                        + z.powi(6)
                        + (q2 * z.powi(2) + z.powi(4)) * e1
                        + z.powi(6) * e2;
                    Ok(z * z * num / den)
                }
                4 => {
                    let (za, zb, zc) = (inputs[0], inputs[1], inputs[2]);
                    let e1 = za + zb + zc;
                    let e2 = za * zb + zb * zc + za * zc;
                    let e3 = za * zb * zc;
                    let zn = q1 * q2 * q3
                        + 3.0 * q1 * q2 * z.powi(2)
                        + q1 * z.powi(6)
                        + (q1 * q2 * z.powi(4) + q1 * z.powi(6)) * e1
                        + q1 * z.powi(10) * e2
                        + z.powi(18) * e3;
                    let zd = q2 * q3 * q4
                        + 6.0 * q2 * q3 * z.powi(2)
                        + 3.0 * q2 * z.powi(4)
                        + 4.0 * q2 * z.powi(6)
                        + z.powi(12)
                        + (q2 * q3 * z.powi(2) + 3.0 * q2 * z.powi(4) + z.powi(8)) * e1
                        + (q2 * z.powi(6) + z.powi(8)) * e2
                        + z.powi(12) * e3;
                    Ok(z * z * zn / zd)
                }
                _ => Err(Error::Input(format!("no scalar recursion for connectivity {c_j}"))),
            }
        }
    }
}

/// The zero-temperature connectivity-4 fixed point at Q = 4: the positive
/// root of z(6 + 3z) = 3, iterated to convergence.
pub fn zero_t_fixed_point_c4() -> f64 {
    let mut z: f64 = 0.5;
    loop {
        let next = 3.0 / (6.0 + 3.0 * z);
        if (next - z).abs() < 1e-15 {
            return next;
        }
        z = next;
    }
}

/// Population of scalar ratios, one per member, with member connectivities
/// drawn from the node distribution.
#[derive(Clone, Debug)]
pub struct ParamagneticState {
    pub params: ModelParams,
    pub mean_c: f64,
    pub z: Vec<f64>,
    pub conn: Vec<u8>,
    pub sweeps_run: usize,
    /// Kolmogorov-Smirnov stationarity declared during the run
    pub stationary: bool,
    class_lo: Vec<u32>,
    class_hi: Vec<u32>,
}

impl ParamagneticState {
    pub fn z_mean(&self) -> f64 {
        self.z.iter().sum::<f64>() / self.z.len() as f64
    }

    fn draw_excess(&self, ensemble: &EnsembleSpec, rng: &mut ChaCha8Rng) -> usize {
        let hi = ensemble.excess_probs.1 > 0.0 && rng.gen::<f64>() < ensemble.excess_probs.1;
        let class = if hi { &self.class_hi } else { &self.class_lo };
        let class = if class.is_empty() {
            if hi {
                &self.class_lo
            } else {
                &self.class_hi
            }
        } else {
            class
        };
        class[rng.gen_range(0..class.len())] as usize
    }
}

/// Two-sample Kolmogorov-Smirnov distance between equally sized samples.
fn ks_distance(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_unstable_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_unstable_by(|x, y| x.partial_cmp(y).unwrap());
    let n = a.len() as f64;
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            i += 1;
        } else {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / n).abs());
    }
    d
}

/// Iterate the scalar population to stationarity. Stationarity is declared
/// when the KS distance between successive epochs stays below 0.005 for 10
/// consecutive sweeps; the run stops early then.
pub fn z_population(
    ensemble: &EnsembleSpec,
    params: &ModelParams,
    m: usize,
    max_sweeps: usize,
    seed: u64,
) -> Result<ParamagneticState> {
    if !(ensemble.floor_c == 3 || (ensemble.floor_c == 4 && ensemble.node_probs.1 == 0.0)) {
        return Err(Error::Input(
            "the scalar recursions cover connectivities 3 and 4 only".into(),
        ));
    }
    let mut rng = stream(seed, Domain::Init, 1);
    let mut conn = Vec::with_capacity(m);
    for _ in 0..m {
        conn.push(ensemble.sample_connectivity(Side::Node, &mut rng) as u8);
    }
    let init = match params.temperature {
        Temperature::Zero => 0.45,
        Temperature::Finite(_) => 0.3,
    };
    let mut state = ParamagneticState {
        params: *params,
        mean_c: ensemble.mean_connectivity,
        z: vec![init; m],
        conn,
        sweeps_run: 0,
        stationary: false,
        class_lo: Vec::new(),
        class_hi: Vec::new(),
    };
    let lo = ensemble.floor_c as u8;
    for (i, &c) in state.conn.iter().enumerate() {
        if c == lo {
            state.class_lo.push(i as u32);
        } else {
            state.class_hi.push(i as u32);
        }
    }
    let mut prev = state.z.clone();
    let mut calm = 0usize;
    let mut inputs = [0.0f64; 8];
    for sweep in 0..max_sweeps {
        let mut rng = stream(seed, Domain::Sweep, sweep as u64);
        for i in 0..m {
            let c = state.conn[i] as usize;
            for slot in inputs.iter_mut().take(c - 1) {
                *slot = state.z[state.draw_excess(ensemble, &mut rng)];
            }
            state.z[i] = z_update(&inputs[..c - 1], c, params)?;
        }
        state.sweeps_run = sweep + 1;
        let mut a = prev.clone();
        let mut b = state.z.clone();
        let d = ks_distance(&mut a, &mut b);
        prev.copy_from_slice(&state.z);
        if d < 0.005 {
            calm += 1;
            if calm >= 10 {
                state.stationary = true;
                break;
            }
        } else {
            calm = 0;
        }
    }
    Ok(state)
}

/// Zero-temperature scalar population (Q <= 4; larger Q falls back to the
/// full-table machinery).
pub fn z_population_zero_t(
    ensemble: &EnsembleSpec,
    q: usize,
    m: usize,
    max_sweeps: usize,
    seed: u64,
) -> Result<ParamagneticState> {
    if q > 4 {
        return Err(Error::Input(
            "zero-temperature scalar reduction requires Q <= 4; use the full-table route".into(),
        ));
    }
    let params = ModelParams::new(q, Temperature::Zero, 1.0)?;
    z_population(ensemble, &params, m, max_sweeps, seed)
}

/// Closed-form node free energy for a connectivity-3 test node.
fn fav_c3(q: usize, t: f64, zl: &[f64]) -> f64 {
    let z = (-1.0 / t).exp();
    let (q1, q2, q3) = (q_n(q, 1), q_n(q, 2), q_n(q, 3));
    let e1 = zl[0] + zl[1] + zl[2];
    let e2 = zl[0] * zl[1] + zl[1] * zl[2] + zl[0] * zl[2];
    let e3 = zl[0] * zl[1] * zl[2];
    let poly = q1 * q2 * q3
        + 3.0 * q1 * q2 * z.powi(2)
        + q1 * z.powi(6)
        + (q1 * q2 * z.powi(2) + q1 * z.powi(4)) * e1
        + q1 * z.powi(6) * e2
        + z.powi(12) * e3;
    4.0 - t * (q as f64 * poly).ln()
}

/// Closed-form node free energy for a connectivity-4 test node.
fn fav_c4(q: usize, t: f64, zl: &[f64]) -> f64 {
    let z = (-1.0 / t).exp();
    let (q1, q2, q3, q4) = (q_n(q, 1), q_n(q, 2), q_n(q, 3), q_n(q, 4));
    let e1: f64 = zl.iter().sum();
    let mut e2 = 0.0;
    let mut e3 = 0.0;
    for i in 0..4 {
        for j in i + 1..4 {
            e2 += zl[i] * zl[j];
            for k in j + 1..4 {
                e3 += zl[i] * zl[j] * zl[k];
            }
        }
    }
    let e4 = zl[0] * zl[1] * zl[2] * zl[3];
    let poly = q1 * q2 * q3 * q4
        + 6.0 * q1 * q2 * q3 * z.powi(2)
        + 3.0 * q1 * q2 * z.powi(4)
        + 4.0 * q1 * q2 * z.powi(6)
        + q1 * z.powi(12)
        + (q1 * q2 * q3 * z.powi(2) + 3.0 * q1 * q2 * z.powi(4) + q1 * z.powi(8)) * e1
        + (q1 * q2 * z.powi(6) + q1 * z.powi(8)) * e2
        + q1 * z.powi(12) * e3
        + z.powi(20) * e4;
    5.0 - t * (q as f64 * poly).ln()
}

/// Closed-form link free energy.
fn flink(q: usize, t: f64, zi: f64, zj: f64) -> f64 {
    -t * (q as f64 * (q_n(q, 1) + zi * zj)).ln()
}

/// Closed-form local energy of a connectivity-3 test node.
fn eav_c3(q: usize, t: f64, zl: &[f64]) -> f64 {
    let z = (-1.0 / t).exp();
    let (q1, q2, q3) = (q_n(q, 1), q_n(q, 2), q_n(q, 3));
    let e1 = zl[0] + zl[1] + zl[2];
    let e2 = zl[0] * zl[1] + zl[1] * zl[2] + zl[0] * zl[2];
    let e3 = zl[0] * zl[1] * zl[2];
    let den = q1 * q2 * q3
        + 3.0 * q1 * q2 * z.powi(2)
        + q1 * z.powi(6)
        + (q1 * q2 * z.powi(2) + q1 * z.powi(4)) * e1
        + q1 * z.powi(6) * e2
        + z.powi(12) * e3;
    let num = 4.0 * q1 * q2 * q3
        + 18.0 * q1 * q2 * z.powi(2)
        + 10.0 * q1 * z.powi(6)
        + (6.0 * q1 * q2 * z.powi(2) + 8.0 * q1 * z.powi(4)) * e1
        + 10.0 * q1 * z.powi(6) * e2
        + 16.0 * z.powi(12) * e3;
    num / den
}

/// Closed-form local energy of a connectivity-4 test node. The z^4
/// denominator coefficient is 3 Q1 Q2: the weighted count of the
/// two-coincidence configurations, consistent with both the free-energy
/// polynomial and a direct enumeration of the trace.
fn eav_c4(q: usize, t: f64, zl: &[f64]) -> f64 {
    let z = (-1.0 / t).exp();
    let (q1, q2, q3, q4) = (q_n(q, 1), q_n(q, 2), q_n(q, 3), q_n(q, 4));
    let e1: f64 = zl.iter().sum();
    let mut e2 = 0.0;
    let mut e3 = 0.0;
    for i in 0..4 {
        for j in i + 1..4 {
            e2 += zl[i] * zl[j];
            for k in j + 1..4 {
                e3 += zl[i] * zl[j] * zl[k];
            }
        }
    }
    let e4 = zl[0] * zl[1] * zl[2] * zl[3];
    let den = q1 * q2 * q3 * q4
        + 6.0 * q1 * q2 * q3 * z.powi(2)
        + 3.0 * q1 * q2 * z.powi(4)
        + 4.0 * q1 * q2 * z.powi(6)
        + q1 * z.powi(12)
        + (q1 * q2 * q3 * z.powi(2) + 3.0 * q1 * q2 * z.powi(4) + q1 * z.powi(8)) * e1
        + (q1 * q2 * z.powi(6) + q1 * z.powi(8)) * e2
        + q1 * z.powi(12) * e3
        + z.powi(20) * e4;
    let num = 5.0 * q1 * q2 * q3 * q4
        + 42.0 * q1 * q2 * q3 * z.powi(2)
        + 27.0 * q1 * q2 * z.powi(4)
        + 44.0 * q1 * q2 * z.powi(6)
        + 17.0 * q1 * z.powi(12)
        + (7.0 * q1 * q2 * q3 * z.powi(2) + 27.0 * q1 * q2 * z.powi(4) + 13.0 * q1 * z.powi(8))
            * e1
        + (11.0 * q1 * q2 * z.powi(6) + 13.0 * q1 * z.powi(8)) * e2
        + 17.0 * q1 * z.powi(12) * e3
        + 25.0 * z.powi(20) * e4;
    num / den
}

/// Thermodynamics of a paramagnetic state.
#[derive(Clone, Copy, Debug)]
pub struct Thermo {
    pub f_av: f64,
    pub e_av: f64,
    pub s_av: f64,
    pub z_mean: f64,
    /// set when the state had not reached stationarity
    pub stationary_warning: bool,
}

/// Monte-Carlo average of the closed forms over the scalar population:
/// node and link draws use the same samples for F and E, so the entropy
/// (E - F)/T stays accurate at low temperature. In the zero-temperature
/// mode the limits are exact: f = e = 3<c> - 5 at Q = 4, and the entropy
/// comes from the dedicated zero-temperature expression.
pub fn paramagnetic_thermodynamics(
    state: &ParamagneticState,
    ensemble: &EnsembleSpec,
    draws: usize,
    seed: u64,
) -> Result<Thermo> {
    let q = state.params.q;
    match state.params.temperature {
        Temperature::Zero => {
            if q != 4 {
                return Err(Error::Input("zero-temperature closed forms require Q = 4".into()));
            }
            let p4 = ensemble.node_probs.1;
            let p3 = ensemble.node_probs.0;
            let f = p3 * 4.0 + p4 * 7.0;
            let s = paramagnetic_entropy_zero_t(ensemble, q, state, draws, seed)?;
            Ok(Thermo {
                f_av: f,
                e_av: f,
                s_av: s,
                z_mean: state.z_mean(),
                stationary_warning: !state.stationary,
            })
        }
        Temperature::Finite(t) => {
            if ensemble.floor_c != 3 && !(ensemble.floor_c == 4 && ensemble.node_probs.1 == 0.0) {
                return Err(Error::Input(
                    "closed forms cover mean connectivities in [3, 4]".into(),
                ));
            }
            let mut rng = stream(seed, Domain::Measure, 0);
            let p4 = if ensemble.floor_c == 4 { 1.0 } else { ensemble.node_probs.1 };
            let mut zl = [0.0f64; 4];
            let mut f_node = 0.0;
            let mut e_node = 0.0;
            for _ in 0..draws {
                if rng.gen::<f64>() < p4 {
                    for slot in zl.iter_mut() {
                        *slot = state.z[state.draw_excess(ensemble, &mut rng)];
                    }
                    f_node += fav_c4(q, t, &zl);
                    e_node += eav_c4(q, t, &zl);
                } else {
                    for slot in zl.iter_mut().take(3) {
                        *slot = state.z[state.draw_excess(ensemble, &mut rng)];
                    }
                    f_node += fav_c3(q, t, &zl[..3]);
                    e_node += eav_c3(q, t, &zl[..3]);
                }
            }
            let mut f_link = 0.0;
            for _ in 0..draws {
                let zi = state.z[state.draw_excess(ensemble, &mut rng)];
                let zj = state.z[state.draw_excess(ensemble, &mut rng)];
                f_link += flink(q, t, zi, zj);
            }
            let nd = draws as f64;
            let f_av = f_node / nd - ensemble.mean_connectivity / 2.0 * f_link / nd;
            let e_av = e_node / nd;
            Ok(Thermo {
                f_av,
                e_av,
                s_av: (e_av - f_av) / t,
                z_mean: state.z_mean(),
                stationary_warning: !state.stationary,
            })
        }
    }
}

/// Zero-temperature entropy of the paramagnetic state: the T-coefficient
/// of the zero-temperature free-energy limits, averaged over the scalar
/// population. At <c> = 3 it reduces to ln(Q2 Q3 / sqrt(Q Q1)) for any Q;
/// away from <c> = 3 the connectivity-4 node term requires Q = 4.
pub fn paramagnetic_entropy_zero_t(
    ensemble: &EnsembleSpec,
    q: usize,
    state: &ParamagneticState,
    draws: usize,
    seed: u64,
) -> Result<f64> {
    let (q1, q2, q3) = (q_n(q, 1), q_n(q, 2), q_n(q, 3));
    let qf = q as f64;
    let p4 = ensemble.node_probs.1;
    let ln_node3 = (qf * q1 * q2 * q3).ln();
    if p4 == 0.0 {
        // deterministic: all nodes have connectivity 3 and all ratios are 0
        return Ok(ln_node3 - ensemble.mean_connectivity / 2.0 * (qf * q1).ln());
    }
    if q != 4 {
        return Err(Error::Input(
            "zero-temperature entropy away from <c> = 3 requires Q = 4".into(),
        ));
    }
    let mut rng = stream(seed, Domain::Measure, 1);
    let mut node4 = 0.0;
    for _ in 0..draws {
        let mut tot = 0.0;
        for _ in 0..4 {
            tot += state.z[state.draw_excess(ensemble, &mut rng)];
        }
        node4 += (qf * q1 * q2 * q3 * (6.0 + tot)).ln();
    }
    let mut link = 0.0;
    for _ in 0..draws {
        let zi = state.z[state.draw_excess(ensemble, &mut rng)];
        let zj = state.z[state.draw_excess(ensemble, &mut rng)];
        link += (qf * (q1 + zi * zj)).ln();
    }
    let nd = draws as f64;
    Ok((1.0 - p4) * ln_node3 + p4 * node4 / nd - ensemble.mean_connectivity / 2.0 * link / nd)
}

/// The colour-symmetric self-consistent solution of the interpolated model
/// at integer mean connectivity, found by damped iteration of the full
/// QxQ message update on symmetric tables; no hand-derived rational
/// functions. Thermodynamics by direct enumeration of the node and link
/// traces on the fixed point.
pub fn reduction_generic(
    params: &ModelParams,
    ensemble: &EnsembleSpec,
) -> Result<(MessageTable, Thermo)> {
    let t = match params.temperature {
        Temperature::Finite(t) => t,
        Temperature::Zero => {
            return Err(Error::Input(
                "the generic symmetric reduction runs at finite temperature".into(),
            ))
        }
    };
    if ensemble.node_probs.1 != 0.0 {
        return Err(Error::Input(
            "the generic symmetric reduction requires integer mean connectivity".into(),
        ));
    }
    let c = ensemble.floor_c;
    let q = params.q;
    let ctx = KernelCtx::new(*params, c);
    let mut table = MessageTable::zero(q);
    let mut converged = false;
    for _ in 0..20_000 {
        let descs: Vec<&MessageTable> = vec![&table; c - 1];
        let raw = update_message_finite_t(&descs, c, &ctx)?;
        // project onto the symmetric subspace and damp
        let mut diag = 0.0;
        let mut off = 0.0;
        for a in 0..q {
            for b in 0..q {
                if a == b {
                    diag += raw.get(a, b);
                } else {
                    off += raw.get(a, b);
                }
            }
        }
        diag /= q as f64;
        off /= (q * q - q) as f64;
        let gauge = diag;
        let sym = MessageTable::from_fn(q, |a, b| if a == b { 0.0 } else { off - gauge });
        let next = MessageTable::from_fn(q, |a, b| {
            0.5 * table.get(a, b) + 0.5 * sym.get(a, b)
        });
        let delta = next.max_abs_diff(&table);
        table = next;
        if delta < 1e-13 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numeric(
            "symmetric fixed-point iteration did not converge".into(),
        ));
    }

    // node and link traces on the fixed point (the measurement context must
    // cover test nodes of connectivity c)
    let mctx = KernelCtx::new(*params, c);
    let beta = 1.0 / t;
    let mut scratch = MeasureScratch::new();
    let msgs: Vec<&[f64]> = vec![table.as_slice(); c];
    let trace = node_trace_finite(&mctx, beta, t, &msgs, None, &mut scratch);
    let (tln, _) = link_trace_finite(q, beta, t, table.as_slice(), table.as_slice(), None);
    let f_av = trace.free_energy + ensemble.mean_connectivity / 2.0 * tln;
    let e_av = trace.e_local;
    let z_mean = (-(table.get(0, 0) - table.get(0, 1)) / t).exp();
    Ok((
        table,
        Thermo {
            f_av,
            e_av,
            s_av: (e_av - f_av) / t,
            z_mean,
            stationary_warning: false,
        },
    ))
}

/// Bisection for a sign change of `s(x)`; stops when |s| < 1e-4 or the
/// bracket is narrower than 1e-4.
pub fn bisect_zero(
    mut s: impl FnMut(f64) -> Result<f64>,
    bracket: (f64, f64),
) -> Result<f64> {
    let (mut lo, mut hi) = bracket;
    let s_lo = s(lo)?;
    let s_hi = s(hi)?;
    if s_lo == 0.0 {
        return Ok(lo);
    }
    if s_hi == 0.0 {
        return Ok(hi);
    }
    if s_lo.signum() == s_hi.signum() {
        return Err(Error::Numeric(format!(
            "no sign change in bracket [{lo}, {hi}]: s = {s_lo:.6}, {s_hi:.6}"
        )));
    }
    let rising = s_hi > 0.0;
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        let v = s(mid)?;
        if v.abs() < 1e-4 || (hi - lo) < 1e-4 {
            return Ok(mid);
        }
        if (v > 0.0) == rising {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Temperature at which the paramagnetic entropy crosses zero, for the
/// given ensemble and interaction mixing. The pure model uses the scalar
/// population and the closed forms; the interpolated model uses the
/// generic symmetric reduction.
pub fn find_zero_entropy_temperature(
    ensemble: &EnsembleSpec,
    params: &ModelParams,
    bracket: (f64, f64),
) -> Result<f64> {
    let q = params.q;
    let lambda = params.lambda;
    let s_of_t = |t: f64| -> Result<f64> {
        let p = ModelParams::new(q, Temperature::Finite(t), lambda)?;
        if params.is_pure_diversity() {
            let state = z_population(ensemble, &p, 20_000, 400, 9001)?;
            let thermo = paramagnetic_thermodynamics(&state, ensemble, 200_000, 77)?;
            Ok(thermo.s_av)
        } else {
            let (_, thermo) = reduction_generic(&p, ensemble)?;
            Ok(thermo.s_av)
        }
    };
    bisect_zero(s_of_t, bracket)
}

/// Mean connectivity at which the zero-temperature paramagnetic entropy
/// crosses zero (Q = 4).
pub fn find_zero_entropy_connectivity(q: usize, bracket: (f64, f64)) -> Result<f64> {
    let s_of_c = |c: f64| -> Result<f64> {
        let ens = EnsembleSpec::from_mean(c, q)?;
        let state = z_population_zero_t(&ens, q, 20_000, 400, 4242)?;
        paramagnetic_entropy_zero_t(&ens, q, &state, 200_000, 99)
    };
    bisect_zero(s_of_c, bracket)
}
