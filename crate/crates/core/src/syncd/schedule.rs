//! Collision-free pull schedule for exploration and exploitation.
//!
//! A phase is a sequence of cycles of `M` steps. At position `p` agent `j`
//! has slot offset `u = (p - j) mod M`. Offsets below `|Acc|` exploit
//! `Acc[u]`; the remaining `M_t` offsets explore `K_t[(u - |Acc| + c) mod K_t]`
//! in cycle `c`. Distinct agents always hold distinct offsets, so no two
//! pull the same arm.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("accepted set has {acc} arms but {agents} agents with {remaining} still exploring")]
    AcceptedMismatch { acc: usize, agents: usize, remaining: usize },
    #[error("{active} active arms cannot host {remaining} explorers")]
    TooFewActive { active: usize, remaining: usize },
    #[error("rank {rank} out of range for {agents} agents")]
    Rank { rank: usize, agents: usize },
}

/// Positions in a cycle at which rank `j` exploits.
pub fn exploit_slots(j: usize, agents: usize, remaining: usize) -> Vec<usize> {
    (0..agents - remaining).map(|i| (j + i) % agents).collect()
}

/// Arm for rank `j` at position `p` of cycle `cycle`.
pub fn scheduled_arm(
    j: usize,
    p: usize,
    cycle: usize,
    agents: usize,
    active: &[usize],
    acc: &[usize],
    remaining: usize,
) -> Result<usize, ScheduleError> {
    if j >= agents {
        return Err(ScheduleError::Rank { rank: j, agents });
    }
    if acc.len() + remaining != agents {
        return Err(ScheduleError::AcceptedMismatch { acc: acc.len(), agents, remaining });
    }
    if active.len() < remaining {
        return Err(ScheduleError::TooFewActive { active: active.len(), remaining });
    }
    let u = (p % agents + agents - j) % agents;
    if u < acc.len() {
        Ok(acc[u])
    } else {
        let e = u - acc.len();
        Ok(active[(e + cycle) % active.len()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exploit_slot_examples() {
        assert_eq!(exploit_slots(1, 5, 3), vec![1, 2]);
        assert_eq!(exploit_slots(4, 5, 3), vec![4, 0]);
        assert!(exploit_slots(2, 4, 4).is_empty());
    }

    #[test]
    fn inconsistent_inputs_are_errors() {
        assert!(matches!(scheduled_arm(0, 0, 0, 3, &[1, 2, 3], &[], 2), Err(ScheduleError::AcceptedMismatch { .. })));
        assert!(matches!(scheduled_arm(0, 0, 0, 3, &[1], &[0], 2), Err(ScheduleError::TooFewActive { .. })));
    }

    #[test]
    fn exploit_positions_match_slot_set() {
        let acc = [7, 8];
        for j in 0..5 {
            let slots = exploit_slots(j, 5, 3);
            for p in 0..5 {
                let arm = scheduled_arm(j, p, 0, 5, &[0, 1, 2, 3], &acc, 3).unwrap();
                assert_eq!(acc.contains(&arm), slots.contains(&p));
            }
        }
    }

    #[test]
    fn pure_exploitation_is_round_robin() {
        let acc = [4, 2, 0];
        for j in 0..3 {
            let mut seen: Vec<usize> = (0..3).map(|p| scheduled_arm(j, p, 9, 3, &[], &acc, 0).unwrap()).collect();
            seen.sort_unstable();
            assert_eq!(seen, vec![0, 2, 4]);
        }
    }
}
