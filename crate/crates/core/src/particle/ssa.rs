//! Next-reaction (Gibson–Bruck) sampling of the lattice process.
//!
//! Channels are aggregated: one hop channel per species (rate
//! `2 d hop_j N_j`), one channel per unimolecular reaction (rate `k N_i`) and
//! one per bimolecular reaction. The exact bimolecular propensity
//! `sum_{v,w} n_first(v) n_second(w) c(x_v - x_w)` is never formed; the
//! channel runs at an upper bound and thins its candidates instead. Which
//! molecule fires is resolved only after the channel has been chosen, so the
//! law of the jump process is unchanged while the queue stays tiny.
//!
//! Random numbers come from ChaCha8 seeded through `seed_from_u64`; every
//! trajectory owns its own generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fenwick::Fenwick;
use super::queue::EventQueue;
use super::{
    sample_counts_with, empirical_fields, BimolecularPlacement, CrdmeProcess, LatticeReaction, LatticeState,
    OrderedTime, UnimolecularPlacement,
};
use crate::error::{param, Error, Result};
use crate::network::Center;
use crate::spectral::{GridField, PeriodicGrid};

/// A fired event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Event {
    Hop { species: usize, from: usize, to: usize },
    Reaction { index: usize },
    /// A bimolecular candidate pair that was thinned away.
    Rejected { index: usize },
}

/// Pair-rate lookup for one bimolecular reaction.
#[derive(Debug, Clone)]
struct Pairing {
    first: usize,
    second: usize,
    /// Total pair rate per flat separation residue `x_first - x_second`.
    folded: Vec<f64>,
    /// Unfolded offsets behind each residue with their rates; more than one
    /// only when the kernel wraps around the torus.
    images: Vec<Vec<([i64; 2], f64)>>,
    /// `max(folded)`, the thinning bound.
    bound: f64,
}

impl Pairing {
    fn new(grid: &PeriodicGrid, first: usize, second: usize, offsets: &[[i64; 2]], coefficients: &[f64]) -> Self {
        let mut folded = vec![0.0; grid.len()];
        let mut images = vec![Vec::new(); grid.len()];
        for (o, &c) in offsets.iter().zip(coefficients) {
            if c > 0.0 {
                let r = grid.shift(0, *o);
                folded[r] += c;
                images[r].push((*o, c));
            }
        }
        let bound = folded.iter().cloned().fold(0.0, f64::max);
        Pairing {
            first,
            second,
            folded,
            images,
            bound,
        }
    }

    fn is_self(&self) -> bool {
        self.first == self.second
    }
}

/// Stepping state of a single trajectory.
///
/// Bimolecular channels fire candidate pairs at the bound rate
/// `max_o c(o) * (number of pairs)`; a candidate picked uniformly among all
/// pairs is accepted with probability `c(x_a - x_b) / max_o c(o)`. This
/// thinning is exact and keeps hops `O(log N)` whatever the kernel width.
#[derive(Debug, Clone)]
pub struct SsaRunner<'a> {
    proc: &'a CrdmeProcess,
    counts: Vec<Vec<u32>>,
    pickers: Vec<Fenwick>,
    /// bimolecular reaction index -> pair lookup
    pairings: Vec<Option<Pairing>>,
    /// species -> channels whose propensity depends on its total count
    dependents: Vec<Vec<usize>>,
    rates: Vec<f64>,
    queue: EventQueue,
    rng: ChaCha8Rng,
    clock: f64,
    events: u64,
    touched: Vec<usize>,
    scratch: Vec<usize>,
}

impl<'a> SsaRunner<'a> {
    pub fn new(proc: &'a CrdmeProcess, init: &LatticeState, seed: u64) -> Result<Self> {
        Self::with_rng(proc, init, ChaCha8Rng::seed_from_u64(seed))
    }

    fn with_rng(proc: &'a CrdmeProcess, init: &LatticeState, rng: ChaCha8Rng) -> Result<Self> {
        let n_species = proc.n_species();
        let n_voxels = proc.grid().len();
        if init.counts.len() != n_species || init.counts.iter().any(|c| c.len() != n_voxels) {
            return Err(Error::Mismatch("initial state does not match the process".into()));
        }
        let n_channels = n_species + proc.reactions().len();
        let mut dependents: Vec<Vec<usize>> = (0..n_species).map(|j| vec![j]).collect();
        let mut pairings = Vec::with_capacity(proc.reactions().len());
        for (index, r) in proc.reactions().iter().enumerate() {
            let channel = n_species + index;
            match r {
                LatticeReaction::Unimolecular { reactant, .. } => {
                    dependents[*reactant].push(channel);
                    pairings.push(None);
                }
                LatticeReaction::Bimolecular {
                    first,
                    second,
                    offsets,
                    coefficients,
                    ..
                } => {
                    dependents[*first].push(channel);
                    if second != first {
                        dependents[*second].push(channel);
                    }
                    pairings.push(Some(Pairing::new(proc.grid(), *first, *second, offsets, coefficients)));
                }
            }
        }
        let mut runner = SsaRunner {
            proc,
            counts: init.counts.clone(),
            pickers: init.counts.iter().map(|c| Fenwick::new(c)).collect(),
            pairings,
            dependents,
            rates: vec![0.0; n_channels],
            queue: EventQueue::new(vec![f64::INFINITY; n_channels]),
            rng,
            clock: init.time(),
            events: 0,
            touched: Vec::with_capacity(4),
            scratch: Vec::new(),
        };
        for c in 0..n_channels {
            let rate = runner.propensity(c);
            runner.rates[c] = rate;
            let t = runner.fresh_time(rate);
            runner.queue.update(c, t);
        }
        Ok(runner)
    }

    pub fn time(&self) -> f64 {
        self.clock
    }

    pub fn events(&self) -> u64 {
        self.events
    }

    pub fn counts(&self) -> &[Vec<u32>] {
        &self.counts
    }

    pub fn state(&self) -> LatticeState {
        LatticeState {
            counts: self.counts.clone(),
            time: OrderedTime::new(self.clock),
        }
    }

    /// Time of the next event, `INFINITY` if nothing can happen.
    pub fn next_time(&self) -> f64 {
        self.queue.peek().map_or(f64::INFINITY, |(_, t)| t)
    }

    fn fresh_time(&mut self, rate: f64) -> f64 {
        if rate > 0.0 {
            let e: f64 = self.rng.sample(Exp1);
            self.clock + e / rate
        } else {
            f64::INFINITY
        }
    }

    fn propensity(&self, channel: usize) -> f64 {
        let n_species = self.proc.n_species();
        let total = |j: usize| self.pickers[j].total() as f64;
        if channel < n_species {
            let dim = self.proc.grid().dim() as f64;
            return 2.0 * dim * self.proc.hop_rate(channel) * total(channel);
        }
        let index = channel - n_species;
        match &self.proc.reactions()[index] {
            LatticeReaction::Unimolecular { reactant, rate, .. } => rate * total(*reactant),
            LatticeReaction::Bimolecular { .. } => {
                let p = self.pairings[index].as_ref().unwrap();
                let pairs = if p.is_self() {
                    let n = total(p.first);
                    0.5 * n * (n - 1.0).max(0.0)
                } else {
                    total(p.first) * total(p.second)
                };
                p.bound * pairs
            }
        }
    }

    fn change(&mut self, species: usize, voxel: usize, delta: i64) {
        let n = &mut self.counts[species][voxel];
        *n = (*n as i64 + delta) as u32;
        self.pickers[species].add(voxel, delta);
    }

    fn pick_molecule(&mut self, species: usize) -> usize {
        let total = self.pickers[species].total();
        let target = self.rng.random_range(0..total);
        self.pickers[species].find(target)
    }

    /// Voxel reached from `origin` by a real displacement (in cells), rounded
    /// stochastically per axis so the mean landing point is exact.
    fn place(&mut self, origin: usize, displacement: [f64; 2]) -> usize {
        let grid = *self.proc.grid();
        let mut step = [0i64; 2];
        for axis in 0..grid.dim() {
            let d = displacement[axis];
            let base = d.floor();
            let frac = d - base;
            step[axis] = base as i64 + i64::from(frac > 0.0 && self.rng.random::<f64>() < frac);
        }
        grid.shift(origin, step)
    }

    fn pick_center(&mut self, centers: &[Center]) -> f64 {
        let u: f64 = self.rng.random();
        let mut acc = 0.0;
        for c in centers {
            acc += c.weight;
            if u < acc {
                return c.alpha;
            }
        }
        centers.last().map_or(0.0, |c| c.alpha)
    }

    /// Fires the next event and returns it, or `None` if no channel can fire.
    pub fn step(&mut self) -> Result<Option<Event>> {
        let Some((channel, t)) = self.queue.peek() else {
            return Ok(None);
        };
        if !t.is_finite() {
            return Ok(None);
        }
        if t < self.clock {
            return Err(Error::QueueCorrupted {
                next: t,
                clock: self.clock,
            });
        }
        self.clock = t;
        self.events += 1;
        let n_species = self.proc.n_species();
        let mut touched = std::mem::take(&mut self.touched);
        touched.clear();
        let event = if channel < n_species {
            self.fire_hop(channel)
        } else {
            self.fire_reaction(channel - n_species, &mut touched)
        };
        self.reschedule(channel, &touched);
        self.touched = touched;
        Ok(Some(event))
    }

    fn reschedule(&mut self, fired: usize, touched: &[usize]) {
        let mut channels = std::mem::take(&mut self.scratch);
        channels.clear();
        channels.extend(touched.iter().flat_map(|&j| self.dependents[j].iter().copied()));
        channels.push(fired);
        channels.sort_unstable();
        channels.dedup();
        for &c in &channels {
            let old = self.rates[c];
            let new = self.propensity(c);
            self.rates[c] = new;
            if c == fired {
                let t = self.fresh_time(new);
                self.queue.update(c, t);
            } else if new != old {
                let tau = self.queue.time(c);
                let t = if new == 0.0 {
                    f64::INFINITY
                } else if old > 0.0 && tau.is_finite() {
                    // Gibson–Bruck reuse of the unexpired clock
                    self.clock + (old / new) * (tau - self.clock)
                } else {
                    self.fresh_time(new)
                };
                self.queue.update(c, t);
            }
        }
        self.scratch = channels;
    }

    // hops leave every total unchanged, so no other channel needs touching
    fn fire_hop(&mut self, species: usize) -> Event {
        let grid = *self.proc.grid();
        let from = self.pick_molecule(species);
        let dir = self.rng.random_range(0..2 * grid.dim());
        let mut step = [0i64; 2];
        step[dir / 2] = if dir % 2 == 0 { 1 } else { -1 };
        let to = grid.shift(from, step);
        self.change(species, from, -1);
        self.change(species, to, 1);
        Event::Hop { species, from, to }
    }

    fn fire_reaction(&mut self, index: usize, touched: &mut Vec<usize>) -> Event {
        let proc = self.proc;
        match &proc.reactions()[index] {
            LatticeReaction::Unimolecular {
                reactant, placement, ..
            } => {
                let z = self.pick_molecule(*reactant);
                self.change(*reactant, z, -1);
                touched.push(*reactant);
                match placement {
                    UnimolecularPlacement::Vanish => {}
                    UnimolecularPlacement::InPlace(p) => {
                        self.change(*p, z, 1);
                        touched.push(*p);
                    }
                    UnimolecularPlacement::Dissociation {
                        products,
                        offsets,
                        cumulative,
                        centers,
                    } => {
                        let u = self.rng.random::<f64>() * cumulative.last().copied().unwrap_or(1.0);
                        let k = cumulative.partition_point(|&c| c <= u).min(offsets.len() - 1);
                        let s = offsets[k];
                        let alpha = self.pick_center(centers);
                        let x = self.place(z, [(1.0 - alpha) * s[0] as f64, (1.0 - alpha) * s[1] as f64]);
                        let y = self.place(z, [-alpha * s[0] as f64, -alpha * s[1] as f64]);
                        self.change(products[0], x, 1);
                        self.change(products[1], y, 1);
                        touched.extend(products);
                    }
                }
                Event::Reaction { index }
            }
            LatticeReaction::Bimolecular { placement, .. } => {
                let Some((a, b, o)) = self.pick_pair(index) else {
                    return Event::Rejected { index };
                };
                let (first, second) = {
                    let p = self.pairings[index].as_ref().unwrap();
                    (p.first, p.second)
                };
                self.change(first, a, -1);
                self.change(second, b, -1);
                touched.extend([first, second]);
                match placement {
                    BimolecularPlacement::Vanish => {}
                    BimolecularPlacement::Binding { product, centers } => {
                        let alpha = self.pick_center(centers);
                        let z = self.place(a, [-(1.0 - alpha) * o[0] as f64, -(1.0 - alpha) * o[1] as f64]);
                        self.change(*product, z, 1);
                        touched.push(*product);
                    }
                    BimolecularPlacement::PairPreserving { products, p } => {
                        let keep = self.rng.random::<f64>() < *p;
                        let (x, y) = if keep { (a, b) } else { (b, a) };
                        self.change(products[0], x, 1);
                        self.change(products[1], y, 1);
                        touched.extend(products);
                    }
                }
                Event::Reaction { index }
            }
        }
    }

    /// Draws a uniformly random pair and thins it; on acceptance returns the
    /// voxels of both reactants and their unfolded offset.
    fn pick_pair(&mut self, index: usize) -> Option<(usize, usize, [i64; 2])> {
        let grid = *self.proc.grid();
        let (first, second, self_pair) = {
            let p = self.pairings[index].as_ref().unwrap();
            (p.first, p.second, p.is_self())
        };
        let (a, b) = if self_pair {
            let n = self.pickers[first].total();
            let i = self.rng.random_range(0..n);
            let mut k = self.rng.random_range(0..n - 1);
            if k >= i {
                k += 1;
            }
            (self.pickers[first].find(i), self.pickers[first].find(k))
        } else {
            (self.pick_molecule(first), self.pick_molecule(second))
        };
        let residue = grid.difference(a, b);
        let u: f64 = self.rng.random();
        let p = self.pairings[index].as_ref().unwrap();
        let rate = p.folded[residue];
        if u * p.bound >= rate {
            return None;
        }
        let images = &p.images[residue];
        let o = if images.len() == 1 {
            images[0].0
        } else {
            let mut w = self.rng.random::<f64>() * rate;
            let mut pick = images[images.len() - 1].0;
            for &(o, c) in images {
                if w < c {
                    pick = o;
                    break;
                }
                w -= c;
            }
            pick
        };
        Some((a, b, o))
    }
}

/// A sampled path, observed at fixed save times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub seed: u64,
    pub save_times: Vec<f64>,
    pub snapshots: Vec<LatticeState>,
    /// `masses[t][j] = N_j / gamma`
    pub masses: Vec<Vec<f64>>,
    pub events: u64,
}

fn check_save_times(save_times: &[f64], t_end: f64) -> Result<()> {
    if !(t_end.is_finite() && t_end > 0.0) {
        return Err(param("T", format!("must be positive, got {t_end}")));
    }
    if save_times.windows(2).any(|w| w[0] > w[1]) {
        return Err(param("save_times", "must be sorted"));
    }
    if save_times.iter().any(|&t| !(0.0..=t_end).contains(&t)) {
        return Err(param("save_times", format!("must lie in [0, {t_end}]")));
    }
    Ok(())
}

fn run_with_rng(
    proc: &CrdmeProcess,
    init: &LatticeState,
    t_end: f64,
    save_times: &[f64],
    rng: ChaCha8Rng,
    seed: u64,
) -> Result<Trajectory> {
    check_save_times(save_times, t_end)?;
    let mut runner = SsaRunner::with_rng(proc, init, rng)?;
    let mut snapshots = Vec::with_capacity(save_times.len());
    let mut masses = Vec::with_capacity(save_times.len());
    let gamma = proc.gamma();
    let mut next_save = 0;
    loop {
        let t_next = runner.next_time();
        while next_save < save_times.len() && save_times[next_save] < t_next.min(f64::MAX) {
            let mut s = runner.state();
            s.time = OrderedTime::new(save_times[next_save]);
            masses.push(s.totals().iter().map(|&n| n as f64 / gamma).collect());
            snapshots.push(s);
            next_save += 1;
        }
        if t_next > t_end || !t_next.is_finite() {
            break;
        }
        runner.step()?;
    }
    Ok(Trajectory {
        seed,
        save_times: save_times.to_vec(),
        snapshots,
        masses,
        events: runner.events(),
    })
}

/// Samples one path of `proc` from `init` up to `t_end`.
pub fn ssa_run(proc: &CrdmeProcess, init: &LatticeState, t_end: f64, save_times: &[f64], seed: u64) -> Result<Trajectory> {
    run_with_rng(proc, init, t_end, save_times, ChaCha8Rng::seed_from_u64(seed), seed)
}

/// Seed of run `index` in an ensemble (SplitMix64 of the pair).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `n_runs` independent paths, each starting from its own Poisson sample of
/// `initial`. Results are returned in run order regardless of scheduling.
pub fn run_ensemble(
    proc: &CrdmeProcess,
    initial: &GridField,
    t_end: f64,
    save_times: &[f64],
    n_runs: usize,
    master_seed: u64,
) -> Result<Vec<Trajectory>> {
    check_save_times(save_times, t_end)?;
    (0..n_runs as u64)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(master_seed, i);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let init = sample_counts_with(initial, proc.gamma(), &mut rng)?;
            run_with_rng(proc, &init, t_end, save_times, rng, seed)
        })
        .collect()
}

/// Ensemble averages per save time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub save_times: Vec<f64>,
    pub n_runs: usize,
    /// `[t][j]`
    pub mean_masses: Vec<Vec<f64>>,
    /// Standard error of the mean, `[t][j]`.
    pub stderr_masses: Vec<Vec<f64>>,
    pub mean_fields: Vec<GridField>,
}

pub fn ensemble_mean(trajectories: &[Trajectory], gamma: f64, grid: &PeriodicGrid) -> Result<EnsembleSummary> {
    let first = trajectories
        .first()
        .ok_or_else(|| param("trajectories", "empty ensemble"))?;
    if trajectories.iter().any(|t| t.save_times != first.save_times || t.snapshots.len() != first.snapshots.len()) {
        return Err(Error::Mismatch("trajectories have different save times".into()));
    }
    let n = trajectories.len() as f64;
    let n_times = first.snapshots.len();
    let n_species = first.masses.first().map_or(0, |m| m.len());
    let mut mean_masses = vec![vec![0.0; n_species]; n_times];
    let mut stderr_masses = vec![vec![0.0; n_species]; n_times];
    let mut mean_fields = Vec::with_capacity(n_times);
    for t in 0..n_times {
        for j in 0..n_species {
            let mean = trajectories.iter().map(|tr| tr.masses[t][j]).sum::<f64>() / n;
            mean_masses[t][j] = mean;
            if trajectories.len() > 1 {
                let var = trajectories
                    .iter()
                    .map(|tr| (tr.masses[t][j] - mean).powi(2))
                    .sum::<f64>()
                    / (n - 1.0);
                stderr_masses[t][j] = (var / n).sqrt();
            }
        }
        let mut acc = GridField::zeros(*grid, n_species);
        for tr in trajectories {
            let f = empirical_fields(&tr.snapshots[t], gamma, grid);
            for (a, b) in acc.values.iter_mut().flatten().zip(f.values.iter().flatten()) {
                *a += b / n;
            }
        }
        acc.time = first.save_times[t];
        mean_fields.push(acc);
    }
    Ok(EnsembleSummary {
        save_times: first.save_times.clone(),
        n_runs: trajectories.len(),
        mean_masses,
        stderr_masses,
        mean_fields,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelKind;
    use crate::network::{preset_reversible_abc, KernelSpec, Placement, Reaction, ReactionNetwork, Species};
    use crate::particle::{build_crdme, sample_initial_counts};
    use std::f64::consts::PI;

    fn abc(dim: usize, eps: f64) -> crate::network::Network {
        preset_reversible_abc(
            dim,
            [1.0, 0.5, 0.1],
            1.0,
            0.05,
            eps,
            KernelKind::Doi,
            vec![Center::new(0.5, 0.0), Center::new(0.5, 1.0)],
        )
        .unwrap()
    }

    fn paper_initial(grid: PeriodicGrid) -> GridField {
        GridField::new(
            grid,
            vec![
                grid.sample(|x| (-10.0 * (x[0] - 1.0).powi(2)).exp()),
                grid.sample(|x| (-10.0 * (x[0] - 2.0).powi(2)).exp()),
                vec![0.0; grid.len()],
            ],
        )
    }

    #[test]
    fn empty_lattice_never_moves() {
        let g = PeriodicGrid::new(1, 32, 2.0 * PI).unwrap();
        let p = build_crdme(&abc(1, 0.3), &g, 100.0, 0.3).unwrap();
        let init = LatticeState::empty(3, 32);
        let tr = ssa_run(&p, &init, 1.0, &[0.0, 0.5, 1.0], 3).unwrap();
        assert_eq!(tr.events, 0);
        for s in &tr.snapshots {
            assert_eq!(s.counts, init.counts);
        }
    }

    #[test]
    fn paths_conserve_linear_invariants() {
        let g = PeriodicGrid::new(1, 64, 2.0 * PI).unwrap();
        let p = build_crdme(&abc(1, 0.4), &g, 300.0, 0.4).unwrap();
        let init = sample_initial_counts(&paper_initial(g), 300.0, 5).unwrap();
        let t0 = init.totals();
        let mut r = SsaRunner::new(&p, &init, 9).unwrap();
        let mut reactions = 0;
        for _ in 0..200_000 {
            match r.step().unwrap() {
                Some(Event::Reaction { .. }) => reactions += 1,
                Some(_) => {}
                None => break,
            }
            let n: Vec<u64> = r.counts().iter().map(|c| c.iter().map(|&x| x as u64).sum()).collect();
            assert_eq!(n[0] + n[2], t0[0] + t0[2]);
            assert_eq!(n[1] + n[2], t0[1] + t0[2]);
        }
        assert!(reactions > 10, "{reactions}");
    }

    #[test]
    fn identical_seeds_identical_paths() {
        let g = PeriodicGrid::new(1, 64, 2.0 * PI).unwrap();
        let p = build_crdme(&abc(1, 0.2), &g, 200.0, 0.2).unwrap();
        let f = paper_initial(g);
        let a = run_ensemble(&p, &f, 0.2, &[0.1, 0.2], 3, 11).unwrap();
        let b = run_ensemble(&p, &f, 0.2, &[0.1, 0.2], 3, 11).unwrap();
        assert_eq!(a, b);
        let c = run_ensemble(&p, &f, 0.2, &[0.1, 0.2], 3, 12).unwrap();
        assert_ne!(a, c);
        assert_ne!(a[0].snapshots, a[1].snapshots);
    }

    fn dissociation_only() -> crate::network::Network {
        let sp = |name: &str| Species {
            name: name.into(),
            diffusivity: 1e-9,
        };
        ReactionNetwork {
            dim: 1,
            species: vec![sp("A"), sp("B"), sp("C")],
            reactions: vec![Reaction {
                reactants: vec![0, 0, 1],
                products: vec![1, 1, 0],
                rate: 0.05,
                kernel: KernelSpec::constant(),
                placement: Placement::Dissociation {
                    separation: KernelSpec::separation(KernelKind::Doi, 0.1),
                    centers: vec![Center::new(1.0, 0.5)],
                },
            }],
        }
        .validate()
        .unwrap()
    }

    #[test]
    fn first_dissociation_time_is_exponential() {
        let g = PeriodicGrid::new(1, 16, 2.0 * PI).unwrap();
        let p = build_crdme(&dissociation_only(), &g, 1.0, 0.1).unwrap();
        let mut init = LatticeState::empty(3, 16);
        init.counts[2][5] = 1;
        let runs = 10_000;
        let mut times = Vec::with_capacity(runs);
        for seed in 0..runs as u64 {
            let mut r = SsaRunner::new(&p, &init, seed).unwrap();
            loop {
                if let Some(Event::Reaction { .. }) = r.step().unwrap() {
                    break;
                }
            }
            times.push(r.time());
            assert_eq!(r.counts()[0].iter().sum::<u32>(), 1);
        }
        let n = runs as f64;
        let mean = times.iter().sum::<f64>() / n;
        let sd = (times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((mean - 20.0).abs() < 3.0 * sd / n.sqrt(), "{mean}");
    }

    fn frozen_binding(reactants: Vec<u32>, eps: f64) -> crate::network::Network {
        let sp = |name: &str| Species {
            name: name.into(),
            diffusivity: 1e-12,
        };
        ReactionNetwork {
            dim: 2,
            species: vec![sp("A"), sp("B"), sp("C")],
            reactions: vec![Reaction {
                reactants,
                products: vec![0, 0, 1],
                rate: 2.0,
                kernel: KernelSpec::separation(KernelKind::Gaussian, eps),
                placement: Placement::ConvexCombination {
                    centers: vec![Center::new(1.0, 0.5)],
                },
            }],
        }
        .validate()
        .unwrap()
    }

    fn mean_first_reaction(p: &CrdmeProcess, init: &LatticeState, runs: u64) -> (f64, f64) {
        let mut times = Vec::with_capacity(runs as usize);
        for seed in 0..runs {
            let mut r = SsaRunner::new(p, init, seed).unwrap();
            while !matches!(r.step().unwrap(), Some(Event::Reaction { .. })) {}
            times.push(r.time());
        }
        let n = runs as f64;
        let mean = times.iter().sum::<f64>() / n;
        let sd = (times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        (mean, sd / n.sqrt())
    }

    #[test]
    fn thinned_pair_channel_fires_at_exact_rate() {
        // wide kernel on a small torus so several offsets alias onto one voxel
        let g = PeriodicGrid::new(2, 8, 1.0).unwrap();
        let eps = 0.16;
        let p = build_crdme(&frozen_binding(vec![1, 1, 0], eps), &g, 1.0, eps).unwrap();
        for (a, b) in [(0, 0), (0, g.flatten([1, 2])), (g.flatten([7, 7]), g.flatten([2, 1]))] {
            let mut init = LatticeState::empty(3, g.len());
            init.counts[0][a] = 1;
            init.counts[1][b] = 1;
            let rate = p.pair_propensity(0, a, b);
            assert!(rate > 0.0);
            let (mean, se) = mean_first_reaction(&p, &init, 4000);
            assert!((mean - 1.0 / rate).abs() < 3.5 * se, "{a},{b}: {mean} vs {}", 1.0 / rate);
        }

        // identical reactants: each unordered pair reacts once
        let p = build_crdme(&frozen_binding(vec![2, 0, 0], eps), &g, 1.0, eps).unwrap();
        let sites = [0, g.flatten([0, 3]), g.flatten([5, 6])];
        let mut init = LatticeState::empty(3, g.len());
        for &v in &sites {
            init.counts[0][v] += 1;
        }
        let total: f64 = (0..3)
            .flat_map(|i| (i + 1..3).map(move |k| (i, k)))
            .map(|(i, k)| p.pair_propensity(0, sites[i], sites[k]))
            .sum();
        let (mean, se) = mean_first_reaction(&p, &init, 4000);
        assert!((mean - 1.0 / total).abs() < 3.5 * se, "{mean} vs {}", 1.0 / total);
    }

    #[test]
    fn single_walker_follows_lattice_heat_kernel() {
        let n = 32;
        let g = PeriodicGrid::new(1, n, 2.0 * PI).unwrap();
        let p = build_crdme(&abc(1, 0.1), &g, 1.0, 0.1).unwrap();
        let mut init = LatticeState::empty(3, n);
        init.counts[0][0] = 1;
        let t = 0.02;
        let paths = 10_000;
        let mut hist = vec![0.0; n];
        for seed in 0..paths {
            let tr = ssa_run(&p, &init, t, &[t], seed).unwrap();
            let v = tr.snapshots[0].counts[0].iter().position(|&c| c == 1).unwrap();
            hist[v] += 1.0;
        }
        // exp(t D Lap_h) e_0 through the lattice Laplacian eigenvalues
        let rate = p.hop_rate(0);
        let expected: Vec<f64> = (0..n)
            .map(|v| {
                (0..n)
                    .map(|m| {
                        let theta = 2.0 * PI * m as f64 / n as f64;
                        (-t * 2.0 * rate * (1.0 - theta.cos())).exp() * (theta * v as f64).cos()
                    })
                    .sum::<f64>()
                    / n as f64
                    * paths as f64
            })
            .collect();
        assert!((expected.iter().sum::<f64>() - paths as f64).abs() < 1e-6);
        // pool bins with small expectation
        let (mut chi2, mut df, mut pool_o, mut pool_e) = (0.0, 0usize, 0.0, 0.0);
        for (o, e) in hist.iter().zip(&expected) {
            if *e >= 5.0 {
                chi2 += (o - e).powi(2) / e;
                df += 1;
            } else {
                pool_o += o;
                pool_e += e;
            }
        }
        if pool_e > 0.0 {
            chi2 += (pool_o - pool_e).powi(2) / pool_e;
            df += 1;
        }
        let df = (df - 1) as f64;
        // Wilson–Hilferty 0.1% critical value
        let z = 3.09;
        let crit = df * (1.0 - 2.0 / (9.0 * df) + z * (2.0 / (9.0 * df)).sqrt()).powi(3);
        assert!(chi2 < crit, "chi2 {chi2} df {df} crit {crit}");
    }

    #[test]
    fn well_mixed_voxel_follows_mass_action() {
        // one voxel: every pair interacts at k1 / (gamma h)
        let g = PeriodicGrid::new(1, 1, 1.0).unwrap();
        let net = abc(1, 0.1);
        let gamma = 1000.0;
        let p = build_crdme(&net, &g, gamma, 0.1).unwrap();
        let f = GridField::uniform(g, &[1.0, 0.8, 0.0]);
        let runs = 200;
        let tr = run_ensemble(&p, &f, 2.0, &[2.0], runs, 4).unwrap();
        let s = ensemble_mean(&tr, gamma, &g).unwrap();
        // classical RK4 of a' = -a b + 0.05 c, c' = a b - 0.05 c
        let (mut a, mut b, mut c) = (1.0f64, 0.8f64, 0.0f64);
        let dt = 1e-4;
        let rhs = |a: f64, b: f64, c: f64| -a * b + 0.05 * c;
        for _ in 0..20_000 {
            let k1 = rhs(a, b, c);
            let k2 = rhs(a + 0.5 * dt * k1, b + 0.5 * dt * k1, c - 0.5 * dt * k1);
            let k3 = rhs(a + 0.5 * dt * k2, b + 0.5 * dt * k2, c - 0.5 * dt * k2);
            let k4 = rhs(a + dt * k3, b + dt * k3, c - dt * k3);
            let d = dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            a += d;
            b += d;
            c -= d;
        }
        let se = s.stderr_masses[0][2];
        // the Poisson start has its own spread, so compare the conserved-offset
        // corrected mean with a small fluctuation allowance
        assert!((s.mean_masses[0][2] - c).abs() < 4.0 * se + 2e-3, "{} vs {c} (se {se})", s.mean_masses[0][2]);
    }

    #[test]
    fn ensemble_mean_of_one_and_two() {
        let g = PeriodicGrid::new(1, 4, 1.0).unwrap();
        let mut s1 = LatticeState::empty(1, 4);
        s1.counts[0][1] = 4;
        let mut s2 = LatticeState::empty(1, 4);
        s2.counts[0][1] = 2;
        let tr = |s: LatticeState, m: f64| Trajectory {
            seed: 0,
            save_times: vec![0.0],
            snapshots: vec![s],
            masses: vec![vec![m]],
            events: 0,
        };
        let one = ensemble_mean(&[tr(s1.clone(), 4.0)], 1.0, &g).unwrap();
        assert_eq!(one.mean_masses, vec![vec![4.0]]);
        assert_eq!(one.mean_fields[0].values[0][1], 4.0 / 0.25);
        let two = ensemble_mean(&[tr(s1, 4.0), tr(s2, 2.0)], 1.0, &g).unwrap();
        assert_eq!(two.mean_masses, vec![vec![3.0]]);
        assert_eq!(two.mean_fields[0].values[0][1], 3.0 / 0.25);
        assert!((two.stderr_masses[0][0] - 1.0).abs() < 1e-15);
        let mut bad = tr(LatticeState::empty(1, 4), 0.0);
        bad.save_times = vec![0.5];
        assert!(ensemble_mean(&[bad, tr(LatticeState::empty(1, 4), 0.0)], 1.0, &g).is_err());
    }
}
