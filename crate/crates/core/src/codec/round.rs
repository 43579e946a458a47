//! Full communication rounds built from single messages.

use serde::{Deserialize, Serialize};

use super::quant::{max_wire_len, DeltaMessage, Encoding};
use super::wire::{Anchors, Receiver, Role, Sender, Waiter};
use super::CodecError;

/// Bookkeeping for one transmitted message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub round: u32,
    pub sender: usize,
    pub receiver: usize,
    pub arm: usize,
    pub encoding: Encoding,
    /// Global pull count behind the transmitted statistic.
    pub pulls: u64,
    pub wire_bits: usize,
    pub steps: u64,
}

/// Ordered `(sender, receiver)` pairs of a round.
pub fn pair_order(agents: usize) -> Vec<(usize, usize)> {
    (0..agents).flat_map(|i| (0..agents).filter(move |&l| l != i).map(move |l| (i, l))).collect()
}

/// What every agent knows about an arm before a statistics round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArmSlot {
    pub arm: usize,
    pub encoding: Encoding,
    pub bits: u32,
    pub pulls: u64,
}

/// One agent's view of a statistics round: every ordered pair exchanges
/// one message per active arm, in `(sender, receiver, arm)` order.
#[derive(Debug, Clone)]
pub struct CommRound {
    round: u32,
    rank: usize,
    agents: usize,
    anchors: Anchors,
    slots: Vec<ArmSlot>,
    outgoing: Vec<DeltaMessage>,
    pairs: Vec<(usize, usize)>,
    pair: usize,
    slot: usize,
    role: Option<Role>,
    role_steps: u64,
    received: Vec<Vec<Option<DeltaMessage>>>,
    log: Vec<MessageRecord>,
    steps: u64,
}

impl CommRound {
    /// `outgoing[i]` is this agent's message for `slots[i]`.
    pub fn new(
        round: u32,
        rank: usize,
        agents: usize,
        anchors: Anchors,
        slots: Vec<ArmSlot>,
        outgoing: Vec<DeltaMessage>,
    ) -> Self {
        assert_eq!(slots.len(), outgoing.len());
        let received = vec![vec![None; slots.len()]; agents];
        let mut r = CommRound {
            round,
            rank,
            agents,
            anchors,
            slots,
            outgoing,
            pairs: pair_order(agents),
            pair: 0,
            slot: 0,
            role: None,
            role_steps: 0,
            received,
            log: Vec::new(),
            steps: 0,
        };
        r.start_role();
        r
    }

    pub fn is_done(&self) -> bool {
        self.role.is_none()
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    fn start_role(&mut self) {
        if self.slots.is_empty() || self.pair >= self.pairs.len() {
            self.role = None;
            return;
        }
        let (i, l) = self.pairs[self.pair];
        let s = self.slots[self.slot];
        let max_bits = max_wire_len(s.encoding, s.bits);
        self.role_steps = 0;
        self.role = Some(if self.rank == i {
            Role::Send(Sender::new(self.outgoing[self.slot].wire_bits(), self.agents, i, l, &self.anchors))
        } else if self.rank == l {
            Role::Receive(Receiver::new(self.agents, l, &self.anchors, max_bits))
        } else {
            Role::Wait(Waiter::new(self.agents, i, l, self.rank, &self.anchors, max_bits))
        });
    }

    pub fn arm(&self) -> usize {
        self.role.as_ref().expect("round finished").arm()
    }

    /// Feeds the collision bit of the current step. Returns true when the
    /// round has finished.
    pub fn observe(&mut self, collision: bool) -> Result<bool, CodecError> {
        let role = self.role.as_mut().expect("round finished");
        self.steps += 1;
        self.role_steps += 1;
        if !role.observe(collision)? {
            return Ok(false);
        }
        let (i, l) = self.pairs[self.pair];
        let s = self.slots[self.slot];
        match role {
            Role::Send(_) => {
                let msg = self.outgoing[self.slot];
                self.log.push(MessageRecord {
                    round: self.round,
                    sender: i,
                    receiver: l,
                    arm: s.arm,
                    encoding: s.encoding,
                    pulls: s.pulls,
                    wire_bits: msg.wire_len(),
                    steps: self.role_steps,
                });
            }
            Role::Receive(rx) => {
                let wire = rx.take().ok_or(CodecError::Desync { step: self.steps })?;
                self.received[i][self.slot] = Some(DeltaMessage::from_wire(&wire, s.encoding, s.bits)?);
            }
            Role::Wait(_) => {}
        }
        self.slot += 1;
        if self.slot == self.slots.len() {
            self.slot = 0;
            self.pair += 1;
        }
        self.start_role();
        Ok(self.is_done())
    }

    /// Messages received from `sender`, aligned with the slots.
    pub fn received_from(&self, sender: usize) -> &[Option<DeltaMessage>] {
        &self.received[sender]
    }

    pub fn slots(&self) -> &[ArmSlot] {
        &self.slots
    }

    pub fn log(&self) -> &[MessageRecord] {
        &self.log
    }
}

/// One agent's view of a marking round: for every ordered pair, every
/// mode and every active arm the sender spends one step, colliding with
/// the receiver exactly on the arms it marked.
#[derive(Debug, Clone)]
pub struct CommARound {
    rank: usize,
    anchors: Anchors,
    arms: usize,
    modes: usize,
    own: Vec<Vec<bool>>,
    heard: Vec<Vec<bool>>,
    pairs: Vec<(usize, usize)>,
    cursor: usize,
}

impl CommARound {
    /// `own[mode][i]` is whether this agent marks the i-th active arm.
    pub fn new(rank: usize, agents: usize, anchors: Anchors, own: Vec<Vec<bool>>) -> Self {
        let modes = own.len();
        let arms = own.first().map_or(0, Vec::len);
        let heard = vec![vec![false; arms]; modes];
        CommARound { rank, anchors, arms, modes, own, heard, pairs: pair_order(agents), cursor: 0 }
    }

    pub fn total_steps(&self) -> u64 {
        (self.pairs.len() * self.modes * self.arms) as u64
    }

    pub fn is_done(&self) -> bool {
        self.cursor as u64 >= self.total_steps()
    }

    fn position(&self) -> (usize, usize, usize, usize) {
        let per_pair = self.modes * self.arms;
        let (i, l) = self.pairs[self.cursor / per_pair];
        let rem = self.cursor % per_pair;
        (i, l, rem / self.arms, rem % self.arms)
    }

    pub fn arm(&self) -> usize {
        let (i, l, mode, k) = self.position();
        if self.rank == i && self.own[mode][k] {
            self.anchors.of(l)
        } else {
            self.anchors.of(self.rank)
        }
    }

    pub fn observe(&mut self, collision: bool) -> bool {
        let (_, l, mode, k) = self.position();
        if self.rank == l && collision {
            self.heard[mode][k] = true;
        }
        self.cursor += 1;
        self.is_done()
    }

    /// Union of this agent's own marks and everything it heard.
    pub fn union(&self) -> Vec<Vec<bool>> {
        self.own.iter().zip(&self.heard).map(|(o, h)| o.iter().zip(h).map(|(a, b)| *a || *b).collect()).collect()
    }
}
