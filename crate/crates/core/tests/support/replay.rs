//! Brute-force one-second-granularity replay of a checkpointed run under
//! periodic evictions. Shares no code with `spotsim::simulate`.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[allow(dead_code)]
pub enum Policy {
    Periodic(u64),
    Boundary,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub stages: Vec<u64>,
    pub policy: Policy,
    pub ckpt: u64,
    pub restore: u64,
    pub reprovision: u64,
    /// 0 = never
    pub evict_every: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Outcome {
    pub makespan: u64,
    pub evictions: u64,
    pub checkpoints: u64,
    pub lost: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Working,
    Checkpointing(u64),
    Resuming(u64),
}

/// `None` when the run is not finished by 100× its work.
pub fn replay(inst: &Instance) -> Option<Outcome> {
    let work: u64 = inst.stages.iter().sum();
    let cap = work * 100;
    let boundaries: Vec<u64> = inst
        .stages
        .iter()
        .scan(0, |acc, s| {
            *acc += s;
            Some(*acc)
        })
        .filter(|&b| b > 0 && b < work)
        .collect();
    let tau = match inst.policy {
        Policy::Periodic(t) => t,
        _ => u64::MAX / 4,
    };
    let mut t = 0u64;
    let mut progress = 0u64;
    let mut committed = 0u64;
    let mut phase = Phase::Working;
    let mut next_due = tau;
    let mut out = Outcome { makespan: 0, evictions: 0, checkpoints: 0, lost: 0 };
    if work == 0 {
        return Some(out);
    }
    loop {
        // settle everything that happens at instant t
        loop {
            match phase {
                Phase::Working => {
                    if progress == work {
                        out.makespan = t;
                        return Some(out);
                    }
                    let due = match inst.policy {
                        Policy::Periodic(_) => t >= next_due,
                        Policy::Boundary => progress != committed && boundaries.contains(&progress),
                        Policy::None => false,
                    };
                    if due {
                        phase = Phase::Checkpointing(inst.ckpt);
                        continue;
                    }
                    break;
                }
                Phase::Checkpointing(0) => {
                    committed = progress;
                    out.checkpoints += 1;
                    next_due = t + tau;
                    phase = Phase::Working;
                }
                Phase::Resuming(0) => {
                    next_due = t + tau;
                    phase = Phase::Working;
                }
                _ => break,
            }
        }
        if inst.evict_every > 0 && t > 0 && t % inst.evict_every == 0 {
            out.evictions += 1;
            out.lost += progress - committed;
            progress = committed;
            let resume = inst.reprovision + if committed > 0 { inst.restore } else { 0 };
            phase = Phase::Resuming(resume);
            if resume == 0 {
                next_due = t + tau;
                phase = Phase::Working;
            }
        }
        if t >= cap {
            return None;
        }
        match &mut phase {
            Phase::Working => progress += 1,
            Phase::Checkpointing(left) | Phase::Resuming(left) => *left -= 1,
        }
        t += 1;
    }
}
