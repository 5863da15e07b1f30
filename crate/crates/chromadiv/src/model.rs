//! Cost function, graph ensemble, and colour-space utilities.
//!
//! Colour indexing: colours are 1..=Q in every external format (CLI, CSV,
//! instance files) and 0..Q internally. The conversion happens exactly once,
//! at the I/O boundary; everything in this crate below that boundary is
//! 0-based.

use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Temperature with a distinguished exact-zero mode. Zero-temperature code
/// paths never form 1/T.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Temperature {
    Zero,
    Finite(f64),
}

impl Temperature {
    /// Temperatures below this threshold route to the zero-temperature
    /// kernel: beta > 50 adds nothing at integer energy gaps.
    pub const MIN_FINITE: f64 = 0.02;

    pub fn new(t: f64) -> Result<Self> {
        if !(t >= 0.0) {
            return Err(Error::Input(format!("temperature must be >= 0, got {t}")));
        }
        if t == 0.0 {
            Ok(Temperature::Zero)
        } else if t < Self::MIN_FINITE {
            eprintln!("warning: temperature {t} below {}; using the zero-temperature kernel", Self::MIN_FINITE);
            Ok(Temperature::Zero)
        } else {
            Ok(Temperature::Finite(t))
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Temperature::Zero)
    }

    /// The value of T, 0.0 in zero mode (for reporting only).
    pub fn value(&self) -> f64 {
        match self {
            Temperature::Zero => 0.0,
            Temperature::Finite(t) => *t,
        }
    }

    /// Inverse temperature. Only defined in finite mode.
    pub fn beta(&self) -> Result<f64> {
        match self {
            Temperature::Zero => Err(Error::Input("beta is undefined at zero temperature".into())),
            Temperature::Finite(t) => Ok(1.0 / t),
        }
    }
}

/// Model parameters: number of colours, temperature, and the mixing of the
/// neighbour-neighbour interaction.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ModelParams {
    pub q: usize,
    pub temperature: Temperature,
    /// lambda = 1 is the full colour-diversity cost; lambda = 0 keeps only
    /// the centre-neighbour (plain colouring) interaction.
    pub lambda: f64,
}

impl ModelParams {
    pub fn new(q: usize, temperature: Temperature, lambda: f64) -> Result<Self> {
        if q < 2 {
            return Err(Error::Input(format!("need at least 2 colours, got {q}")));
        }
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::Input(format!("lambda must be in [0,1], got {lambda}")));
        }
        Ok(ModelParams { q, temperature, lambda })
    }

    /// Full colour-diversity model at the given temperature.
    pub fn diversity(q: usize, temperature: Temperature) -> Result<Self> {
        Self::new(q, temperature, 1.0)
    }

    /// True when the cost function is the plain squared-count form rather
    /// than the lambda-mixed one.
    pub fn is_pure_diversity(&self) -> bool {
        self.lambda == 1.0
    }
}

/// Linear-connectivity ensemble: node degrees take only the two values
/// floor(<c>) and floor(<c>)+1.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub mean_connectivity: f64,
    pub floor_c: usize,
    /// P(floor), P(floor+1): (1 - <c> + floor, <c> - floor).
    pub node_probs: (f64, f64),
    /// Link-side (excess) probabilities f_c = c P(c) / <c>.
    pub excess_probs: (f64, f64),
}

/// Which distribution a connectivity draw samples from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Node,
    Link,
}

impl EnsembleSpec {
    /// Build the linear-connectivity ensemble for a mean in [2, Q].
    pub fn from_mean(mean_c: f64, q: usize) -> Result<Self> {
        if !(mean_c >= 2.0 && mean_c <= q as f64) {
            return Err(Error::Input(format!(
                "mean connectivity {mean_c} outside [2, {q}]"
            )));
        }
        // A mean exactly at an integer uses that single class.
        let floor_c = if mean_c == mean_c.floor() {
            mean_c as usize
        } else {
            mean_c.floor() as usize
        };
        let p_hi = mean_c - floor_c as f64;
        let p_lo = 1.0 - p_hi;
        let f_lo = floor_c as f64 * p_lo / mean_c;
        let f_hi = (floor_c + 1) as f64 * p_hi / mean_c;
        Ok(EnsembleSpec {
            mean_connectivity: mean_c,
            floor_c,
            node_probs: (p_lo, p_hi),
            excess_probs: (f_lo, f_hi),
        })
    }

    pub fn connectivities(&self) -> (usize, usize) {
        (self.floor_c, self.floor_c + 1)
    }

    /// Draw a connectivity from the node or the link (excess) distribution.
    pub fn sample_connectivity(&self, side: Side, rng: &mut impl Rng) -> usize {
        let p_hi = match side {
            Side::Node => self.node_probs.1,
            Side::Link => self.excess_probs.1,
        };
        if p_hi > 0.0 && rng.gen::<f64>() < p_hi {
            self.floor_c + 1
        } else {
            self.floor_c
        }
    }
}

/// A node together with the colours visible from it: its own colour plus one
/// colour per neighbour.
#[derive(Clone, Debug)]
pub struct Neighbourhood {
    pub centre_colour: usize,
    pub neighbour_colours: Vec<usize>,
}

impl Neighbourhood {
    pub fn new(centre_colour: usize, neighbour_colours: Vec<usize>) -> Self {
        Neighbourhood { centre_colour, neighbour_colours }
    }

    fn validate(&self, q: usize) -> Result<()> {
        if self.centre_colour >= q
            || self.neighbour_colours.iter().any(|&c| c >= q)
        {
            return Err(Error::Input(format!(
                "colour out of range 0..{q} in neighbourhood"
            )));
        }
        Ok(())
    }
}

/// Local cost of a neighbourhood: the sum of squared colour multiplicities
/// over the closed neighbourhood (centre plus neighbours). Exact integer.
pub fn phi(nb: &Neighbourhood, q: usize) -> Result<u32> {
    nb.validate(q)?;
    let mut counts = vec![0u32; q];
    counts[nb.centre_colour] += 1;
    for &c in &nb.neighbour_colours {
        counts[c] += 1;
    }
    Ok(counts.iter().map(|&n| n * n).sum())
}

/// Interpolated local cost: the constant 4 plus twice the centre-neighbour
/// coincidences plus 2*lambda times the neighbour-neighbour coincidences
/// (unordered pairs). At lambda = 1 and connectivity 3 this equals `phi`.
pub fn phi_lambda(nb: &Neighbourhood, q: usize, lambda: f64) -> Result<f64> {
    nb.validate(q)?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Input(format!("lambda must be in [0,1], got {lambda}")));
    }
    let nbs = &nb.neighbour_colours;
    let centre_hits = nbs.iter().filter(|&&c| c == nb.centre_colour).count() as f64;
    let mut pair_hits = 0usize;
    for j in 0..nbs.len() {
        for k in j + 1..nbs.len() {
            if nbs[j] == nbs[k] {
                pair_hits += 1;
            }
        }
    }
    Ok(4.0 + 2.0 * centre_hits + 2.0 * lambda * pair_hits as f64)
}

/// The multiset of colour multiplicities minimising the squared-count cost
/// for an m-element closed neighbourhood, sorted descending: (m mod Q)
/// entries of ceil(m/Q) followed by floor(m/Q) entries. Convexity forces
/// this split; the assignment to concrete colour labels is free.
pub fn optimal_count_pattern(q: usize, m: usize) -> Vec<usize> {
    assert!(m >= 1, "need at least one element");
    let base = m / q;
    let extra = m % q;
    let mut out = Vec::with_capacity(q);
    out.extend(std::iter::repeat(base + 1).take(extra));
    out.extend(std::iter::repeat(base).take(q - extra));
    out
}

/// The minimal cost attainable by an m-element closed neighbourhood.
pub fn phi_minimum(q: usize, m: usize) -> u32 {
    optimal_count_pattern(q, m)
        .iter()
        .map(|&n| (n * n) as u32)
        .sum()
}

/// Precomputed cost tables over colour tuples, indexed base-Q.
///
/// `phi[m]` holds the cost of every tuple of m colours (the closed
/// neighbourhood, in any order) and `distinct[m]` the number of distinct
/// colours in it. Tuple (x_0, .., x_{m-1}) lives at index sum x_i Q^i.
#[derive(Clone, Debug)]
pub struct CostTables {
    pub q: usize,
    phi: Vec<Vec<f64>>,
    distinct: Vec<Vec<u8>>,
}

impl CostTables {
    /// Tables for closed neighbourhoods of up to `max_m` elements, using the
    /// plain squared-count cost when `lambda` is 1 and the interpolated cost
    /// otherwise. The interpolated cost treats the first tuple element as
    /// the centre.
    pub fn build(q: usize, max_m: usize, lambda: f64) -> Self {
        let mut phi_t = vec![Vec::new(); max_m + 1];
        let mut distinct_t = vec![Vec::new(); max_m + 1];
        let mut counts = vec![0u32; q];
        for m in 2..=max_m {
            let size = q.pow(m as u32);
            let mut pt = Vec::with_capacity(size);
            let mut dt = Vec::with_capacity(size);
            let mut tuple = vec![0usize; m];
            for idx in 0..size {
                let mut rest = idx;
                for t in tuple.iter_mut() {
                    *t = rest % q;
                    rest /= q;
                }
                counts.iter_mut().for_each(|c| *c = 0);
                for &t in &tuple {
                    counts[t] += 1;
                }
                dt.push(counts.iter().filter(|&&c| c > 0).count() as u8);
                if lambda == 1.0 {
                    pt.push(counts.iter().map(|&n| (n * n) as f64).sum());
                } else {
                    let centre = tuple[0];
                    let nbs = &tuple[1..];
                    let hits = nbs.iter().filter(|&&c| c == centre).count() as f64;
                    let mut pairs = 0usize;
                    for j in 0..nbs.len() {
                        for k in j + 1..nbs.len() {
                            if nbs[j] == nbs[k] {
                                pairs += 1;
                            }
                        }
                    }
                    pt.push(4.0 + 2.0 * hits + 2.0 * lambda * pairs as f64);
                }
            }
            phi_t[m] = pt;
            distinct_t[m] = dt;
        }
        CostTables { q, phi: phi_t, distinct: distinct_t }
    }

    #[inline]
    pub fn phi_table(&self, m: usize) -> &[f64] {
        &self.phi[m]
    }

    #[inline]
    pub fn distinct_table(&self, m: usize) -> &[u8] {
        &self.distinct[m]
    }

    /// Smallest cost in the m-element table.
    pub fn phi_min(&self, m: usize) -> f64 {
        self.phi[m].iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};
    use rand::Rng;

    fn nb(centre: usize, nbs: &[usize]) -> Neighbourhood {
        Neighbourhood::new(centre, nbs.to_vec())
    }

    #[test]
    fn phi_reference_values() {
        // colours written 1-based in the comments, 0-based in code
        // centre 1, neighbours {2,3,4}: all distinct
        assert_eq!(phi(&nb(0, &[1, 2, 3]), 4).unwrap(), 4);
        // centre 1, neighbours {1,2,3,4}
        assert_eq!(phi(&nb(0, &[0, 1, 2, 3]), 4).unwrap(), 7);
        // centre 1, neighbours {1,1,1}
        assert_eq!(phi(&nb(0, &[0, 0, 0]), 4).unwrap(), 16);
    }

    #[test]
    fn phi_rejects_out_of_range_colour() {
        assert!(phi(&nb(0, &[4]), 4).is_err());
        assert!(phi(&nb(5, &[0]), 4).is_err());
    }

    #[test]
    fn phi_lambda_reference_values() {
        assert_eq!(phi_lambda(&nb(0, &[1, 2, 3]), 4, 1.0).unwrap(), 4.0);
        assert_eq!(phi_lambda(&nb(0, &[0, 1, 2]), 4, 0.0).unwrap(), 6.0);
        assert_eq!(phi_lambda(&nb(0, &[1, 1, 2]), 4, 0.5).unwrap(), 5.0);
    }

    #[test]
    fn phi_lambda_at_one_matches_phi_for_c3() {
        // exhaustive over all 4^4 connectivity-3 neighbourhoods at Q=4
        for idx in 0..256usize {
            let cols: Vec<usize> = (0..4).map(|i| (idx >> (2 * i)) & 3).collect();
            let n = nb(cols[0], &cols[1..]);
            assert_eq!(
                phi_lambda(&n, 4, 1.0).unwrap(),
                phi(&n, 4).unwrap() as f64
            );
        }
    }

    #[test]
    fn phi_permutation_invariances() {
        let mut rng = stream(9, Domain::Instance, 0);
        for _ in 0..200 {
            let c = 1 + rng.gen_range(0..4);
            let centre = rng.gen_range(0..4);
            let nbs: Vec<usize> = (0..c).map(|_| rng.gen_range(0..4)).collect();
            let base = phi(&nb(centre, &nbs), 4).unwrap();
            // neighbour list permutation
            let mut shuffled = nbs.clone();
            shuffled.reverse();
            assert_eq!(phi(&nb(centre, &shuffled), 4).unwrap(), base);
            // global colour relabelling
            let perm = [2usize, 0, 3, 1];
            let relabeled: Vec<usize> = nbs.iter().map(|&x| perm[x]).collect();
            assert_eq!(phi(&nb(perm[centre], &relabeled), 4).unwrap(), base);
        }
    }

    #[test]
    fn optimal_pattern_reference_values() {
        assert_eq!(optimal_count_pattern(4, 4), vec![1, 1, 1, 1]);
        assert_eq!(optimal_count_pattern(4, 5), vec![2, 1, 1, 1]);
        assert_eq!(optimal_count_pattern(3, 7), vec![3, 2, 2]);
    }

    #[test]
    fn optimal_pattern_matches_exhaustion() {
        // brute force over all compositions for small Q, m
        for q in 2..=4usize {
            for m in 1..=6usize {
                let best = phi_minimum(q, m);
                let mut seen_min = u32::MAX;
                // enumerate all colourings of an m-star and collect minima
                for idx in 0..q.pow(m as u32) {
                    let mut counts = vec![0u32; q];
                    let mut rest = idx;
                    for _ in 0..m {
                        counts[rest % q] += 1;
                        rest /= q;
                    }
                    seen_min = seen_min.min(counts.iter().map(|&n| n * n).sum());
                }
                assert_eq!(best, seen_min, "q={q} m={m}");
            }
        }
    }

    #[test]
    fn phi_minimum_attained_exactly_on_optimal_pattern() {
        // every minimising colouring of the star has the optimal count multiset
        for q in 2..=4usize {
            for m in 1..=6usize {
                let best = phi_minimum(q, m);
                let mut pattern = optimal_count_pattern(q, m);
                pattern.sort_unstable_by(|a, b| b.cmp(a));
                for idx in 0..q.pow(m as u32) {
                    let mut counts = vec![0u32; q];
                    let mut rest = idx;
                    for _ in 0..m {
                        counts[rest % q] += 1;
                        rest /= q;
                    }
                    let val: u32 = counts.iter().map(|&n| n * n).sum();
                    if val == best {
                        let mut sorted: Vec<usize> =
                            counts.iter().map(|&c| c as usize).collect();
                        sorted.sort_unstable_by(|a, b| b.cmp(a));
                        assert_eq!(sorted, pattern, "q={q} m={m}");
                    }
                }
            }
        }
    }

    #[test]
    fn ensemble_reference_values() {
        let e = EnsembleSpec::from_mean(3.5, 4).unwrap();
        assert_eq!(e.floor_c, 3);
        assert!((e.node_probs.0 - 0.5).abs() < 1e-15);
        assert!((e.node_probs.1 - 0.5).abs() < 1e-15);
        assert!((e.excess_probs.0 - 3.0 / 7.0).abs() < 1e-15);
        assert!((e.excess_probs.1 - 4.0 / 7.0).abs() < 1e-15);

        let e3 = EnsembleSpec::from_mean(3.0, 4).unwrap();
        assert_eq!(e3.node_probs, (1.0, 0.0));
        assert_eq!(e3.excess_probs, (1.0, 0.0));

        let e365 = EnsembleSpec::from_mean(3.65, 4).unwrap();
        assert!((e365.node_probs.1 - 0.65).abs() < 1e-12);
        assert!((e365.excess_probs.1 - 2.6 / 3.65).abs() < 1e-12);

        // node mean reproduces <c> exactly
        for &mc in &[3.0, 3.25, 3.5, 3.9, 4.0] {
            let e = EnsembleSpec::from_mean(mc, 4).unwrap();
            let mean = e.node_probs.0 * e.floor_c as f64
                + e.node_probs.1 * (e.floor_c + 1) as f64;
            assert!((mean - mc).abs() < 1e-12);
            // excess consistency f_c <c> = c P(c)
            assert!((e.excess_probs.0 * mc - e.floor_c as f64 * e.node_probs.0).abs() < 1e-12);
            assert!(
                (e.excess_probs.1 * mc - (e.floor_c + 1) as f64 * e.node_probs.1).abs() < 1e-12
            );
        }
    }

    #[test]
    fn ensemble_rejects_out_of_range_mean() {
        assert!(EnsembleSpec::from_mean(1.5, 4).is_err());
        assert!(EnsembleSpec::from_mean(4.5, 4).is_err());
    }

    #[test]
    fn connectivity_sampling_frequencies() {
        let e = EnsembleSpec::from_mean(3.5, 4).unwrap();
        let mut rng = stream(7, Domain::Instance, 1);
        let n = 1_000_000usize;
        let mut hits = 0usize;
        for _ in 0..n {
            if e.sample_connectivity(Side::Link, &mut rng) == 4 {
                hits += 1;
            }
        }
        let p = 4.0 / 7.0;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!(
            ((hits as f64 / n as f64) - p).abs() < 3.0 * sigma,
            "empirical {} vs {}",
            hits as f64 / n as f64,
            p
        );

        // integer means are deterministic on both sides
        let e3 = EnsembleSpec::from_mean(3.0, 4).unwrap();
        let e4 = EnsembleSpec::from_mean(4.0, 4).unwrap();
        for _ in 0..100 {
            assert_eq!(e3.sample_connectivity(Side::Node, &mut rng), 3);
            assert_eq!(e3.sample_connectivity(Side::Link, &mut rng), 3);
            assert_eq!(e4.sample_connectivity(Side::Node, &mut rng), 4);
            assert_eq!(e4.sample_connectivity(Side::Link, &mut rng), 4);
        }
    }

    #[test]
    fn cost_tables_agree_with_direct_evaluation() {
        let tables = CostTables::build(4, 5, 1.0);
        let t4 = tables.phi_table(4);
        let d4 = tables.distinct_table(4);
        for idx in 0..256usize {
            let cols: Vec<usize> = (0..4).map(|i| (idx / 4usize.pow(i as u32)) % 4).collect();
            let n = nb(cols[0], &cols[1..]);
            assert_eq!(t4[idx], phi(&n, 4).unwrap() as f64);
            let mut seen = [false; 4];
            cols.iter().for_each(|&c| seen[c] = true);
            assert_eq!(d4[idx], seen.iter().filter(|&&s| s).count() as u8);
        }
        assert_eq!(tables.phi_min(4), 4.0);
        assert_eq!(tables.phi_min(5), 7.0);
    }

    #[test]
    fn temperature_modes() {
        assert!(Temperature::new(0.0).unwrap().is_zero());
        assert!(Temperature::new(0.01).unwrap().is_zero());
        let t = Temperature::new(0.5).unwrap();
        assert!(!t.is_zero());
        assert!((t.beta().unwrap() - 2.0).abs() < 1e-15);
        assert!(Temperature::Zero.beta().is_err());
        assert!(Temperature::new(-1.0).is_err());
    }
}
