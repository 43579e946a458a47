//! Collision-channel codec: quantized statistics, differential messages,
//! and the bit-level protocol that carries them between agents.
//!
//! The wire format is documented in `docs/wire.md`.

mod quant;
mod round;
mod wire;

pub use quant::{make_delta, max_wire_len, precision_bits, quantize, DeltaMessage, Encoding, QuantizedMean};
pub use round::{pair_order, ArmSlot, CommARound, CommRound, MessageRecord};
pub use wire::{message_steps, Anchors, Receiver, Role, Sender, Waiter};

use thiserror::Error;

use crate::env::{Action, BanditEnv, EnvError};

#[derive(Debug, Error, PartialEq)]
pub enum CodecError {
    #[error("raw mean {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("cannot quantize a statistic with zero pulls")]
    ZeroPulls,
    #[error("precision cannot drop from {from} to {to} bits")]
    PrecisionDecrease { from: u32, to: u32 },
    #[error("differential message without a previous value")]
    MissingReference,
    #[error("reconstructed level {level} outside the {bits}-bit grid")]
    LevelOutOfRange { level: i64, bits: u32 },
    #[error("message of {got} bits, limit {max}")]
    BadLength { got: usize, max: usize },
    #[error("magnitude with a leading zero")]
    LeadingZero,
    #[error("protocol desynchronized at step {step}")]
    Desync { step: u64 },
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Drives a set of per-agent routines through the environment until all
/// report completion on the same step. Returns the number of steps.
pub fn drive<R>(
    env: &mut BanditEnv,
    parties: &mut [R],
    arm: impl Fn(&R) -> usize,
    mut observe: impl FnMut(&mut R, bool) -> Result<bool, CodecError>,
    cap: u64,
) -> Result<u64, CodecError> {
    let mut actions = vec![Action::Idle; parties.len()];
    let mut steps = 0;
    loop {
        for (a, p) in actions.iter_mut().zip(parties.iter()) {
            *a = Action::Pull(arm(p));
        }
        let obs = env.step(&actions)?.to_vec();
        steps += 1;
        let mut done = Vec::with_capacity(parties.len());
        for (p, o) in parties.iter_mut().zip(obs) {
            done.push(observe(p, o.collision)?);
        }
        if done.iter().all(|&d| d) {
            return Ok(steps);
        }
        if done.iter().any(|&d| d) || steps >= cap {
            return Err(CodecError::Desync { step: steps });
        }
    }
}

/// Runs a full statistics round for all agents. `outgoing[m]` holds agent
/// `m`'s messages aligned with `slots`.
pub fn run_comm_round(
    env: &mut BanditEnv,
    anchors: &Anchors,
    slots: &[ArmSlot],
    outgoing: &[Vec<DeltaMessage>],
) -> Result<(Vec<CommRound>, u64), CodecError> {
    let agents = outgoing.len();
    let mut rounds: Vec<CommRound> = (0..agents)
        .map(|m| CommRound::new(0, m, agents, anchors.clone(), slots.to_vec(), outgoing[m].clone()))
        .collect();
    if rounds.iter().all(CommRound::is_done) {
        return Ok((rounds, 0));
    }
    let cap = slots.iter().map(|s| message_steps(max_wire_len(s.encoding, s.bits), agents)).sum::<u64>()
        * pair_order(agents).len() as u64;
    let steps = drive(env, &mut rounds, CommRound::arm, CommRound::observe, cap)?;
    Ok((rounds, steps))
}
