use alloc::vec::Vec;
use core::time::Duration;

use super::{simulate, PricingModel, SimParams};

/// Fixed costs of checkpointing and of coming back after an eviction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Overheads {
    pub checkpoint: Duration,
    pub restore: Duration,
    pub reprovision: Duration,
}

/// A scenario and the makespan it was observed to take.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FitTarget {
    pub params: SimParams,
    pub observed: Duration,
}

/// Candidate values searched per overhead.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverheadGrid {
    pub checkpoint: Vec<Duration>,
    pub restore: Vec<Duration>,
    pub reprovision: Vec<Duration>,
}

impl OverheadGrid {
    /// `0..=max` in `step` increments for every overhead.
    pub fn uniform(max: Duration, step: Duration) -> Self {
        let mut values = Vec::new();
        let mut v = Duration::ZERO;
        while v <= max {
            values.push(v);
            v += step;
        }
        OverheadGrid { checkpoint: values.clone(), restore: values.clone(), reprovision: values }
    }
}

/// Grid search minimising the summed squared relative makespan error.
/// Targets whose simulation does not converge count as an error of 1.
/// Returns the best overheads and their root-mean-square relative error.
pub fn fit_overheads(targets: &[FitTarget], grid: &OverheadGrid) -> (Overheads, f64) {
    let pricing = PricingModel::default();
    let mut best = (Overheads::default(), f64::INFINITY);
    for &checkpoint in &grid.checkpoint {
        for &restore in &grid.restore {
            for &reprovision in &grid.reprovision {
                let o = Overheads { checkpoint, restore, reprovision };
                let mut sse = 0.0;
                for t in targets {
                    let observed = t.observed.as_secs_f64();
                    let rel = match simulate(&t.params.clone().with_overheads(o), &pricing) {
                        Ok(r) if observed > 0.0 => (r.makespan.as_secs_f64() - observed) / observed,
                        Ok(_) => 0.0,
                        Err(_) => 1.0,
                    };
                    sse += rel * rel;
                    if sse >= best.1 {
                        break;
                    }
                }
                if sse < best.1 {
                    best = (o, sse);
                }
            }
        }
    }
    let n = targets.len().max(1) as f64;
    (best.0, libm::sqrt(best.1 / n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spotsim::CheckpointPolicy;
    use alloc::vec;

    #[test]
    fn recovers_planted_overheads() {
        let s = Duration::from_secs;
        let planted = Overheads { checkpoint: s(20), restore: s(40), reprovision: s(60) };
        let scenarios = [
            SimParams::new(vec![s(1000); 4], CheckpointPolicy::BoundaryOnly).every(s(1500)),
            SimParams::new(vec![s(1000); 4], CheckpointPolicy::Periodic(s(300))).every(s(1500)),
            SimParams::new(vec![s(1000); 4], CheckpointPolicy::Periodic(s(200))).every(s(900)),
            SimParams::new(vec![s(700); 4], CheckpointPolicy::Periodic(s(450))).every(s(1100)),
        ];
        let targets: Vec<FitTarget> = scenarios
            .iter()
            .map(|p| FitTarget {
                observed: simulate(&p.clone().with_overheads(planted), &PricingModel::default()).unwrap().makespan,
                params: p.clone(),
            })
            .collect();
        let (fit, rms) = fit_overheads(&targets, &OverheadGrid::uniform(s(80), s(20)));
        assert_eq!(rms, 0.0);
        // restore and reprovisioning only differ before the first commit
        assert_eq!(fit.checkpoint, planted.checkpoint);
        assert_eq!(fit.restore + fit.reprovision, planted.restore + planted.reprovision);
    }
}
