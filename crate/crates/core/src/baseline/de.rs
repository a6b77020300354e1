use rand::Rng as _;
use rayon::prelude::*;

use super::{clip, OptimizerSettings, Tracker, LOWER, UPPER};
use crate::rng;

/// Generational DE/rand/1/bin. Trial vectors of a generation are built
/// sequentially from one stream and evaluated in parallel, so results do
/// not depend on the thread count.
pub(super) fn run(t: &mut Tracker, dim: usize, cfg: &OptimizerSettings, seed: u64) -> usize {
    let np = (cfg.de_population_factor * dim).max(4);
    let mut g = rng::stream(seed, 1);
    let mut pop: Vec<Vec<f64>> = (0..np)
        .map(|_| (0..dim).map(|_| g.gen_range(LOWER..UPPER)).collect())
        .collect();
    let mut fit = Vec::with_capacity(np);
    for x in &pop {
        if t.done() {
            return 0;
        }
        fit.push(t.eval(x));
    }
    while !t.done() {
        let trials: Vec<Vec<f64>> = (0..np)
            .map(|i| {
                let mut r = [0usize; 3];
                for k in 0..3 {
                    r[k] = loop {
                        let c = g.gen_range(0..np);
                        if c != i && !r[..k].contains(&c) {
                            break c;
                        }
                    };
                }
                let mut v: Vec<f64> = (0..dim)
                    .map(|j| pop[r[0]][j] + cfg.de_mutation * (pop[r[1]][j] - pop[r[2]][j]))
                    .collect();
                clip(&mut v);
                let jr = g.gen_range(0..dim);
                for (j, vj) in v.iter_mut().enumerate() {
                    if j != jr && g.gen::<f64>() >= cfg.de_crossover {
                        *vj = pop[i][j];
                    }
                }
                v
            })
            .collect();
        let n = trials.len().min(t.remaining());
        let tr = &*t;
        let vals: Vec<f64> = trials[..n].par_iter().map(|x| tr.value(x)).collect();
        for (i, (x, v)) in trials.into_iter().zip(vals).enumerate() {
            if t.done() {
                break;
            }
            t.record(&x, v);
            if v <= fit[i] {
                pop[i] = x;
                fit[i] = v;
            }
        }
    }
    0
}
