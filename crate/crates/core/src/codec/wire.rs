//! Step-level sender, receiver and waiter roles for one message.
//!
//! Layout of a message with `L` data bits among `M` agents, in steps:
//!
//! ```text
//! pair i < L : [data: bit i ? receiver : own] [cont: own]
//! pair L     : [data: own]                    [cont: receiver]   terminator
//! tail w     : [sender pulls waiter w's anchor]                  M - 2 steps
//! ```
//!
//! The receiver and waiters sit on their own anchors throughout. A
//! collision in a data slot is a one, in a continuation slot the end of
//! the message. Waiters learn the end from the tail collision aimed at
//! them and then idle on their anchor until the tail is over.

use super::CodecError;

/// Arm assigned to each rank for the duration of a round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Anchors(Vec<usize>);

impl Anchors {
    /// Active arms in index order, then every other arm in index order.
    /// Ranks map to distinct arms as long as there are fewer agents than arms.
    pub fn new(active_sorted: &[usize], arms: usize) -> Self {
        let mut seq = active_sorted.to_vec();
        seq.extend((0..arms).filter(|k| !active_sorted.contains(k)));
        Anchors(seq)
    }

    pub fn of(&self, rank: usize) -> usize {
        self.0[rank]
    }
}

/// Steps a message of `wire_len` data bits occupies among `agents` agents.
pub fn message_steps(wire_len: usize, agents: usize) -> u64 {
    (2 * wire_len + 2 + agents.saturating_sub(2)) as u64
}

/// Ranks that are neither sender nor receiver, in rank order.
fn waiters(agents: usize, sender: usize, receiver: usize) -> impl Iterator<Item = usize> {
    (0..agents).filter(move |&r| r != sender && r != receiver)
}

#[derive(Debug, Clone)]
pub struct Sender {
    bits: Vec<bool>,
    own: usize,
    target: usize,
    tail: Vec<usize>,
    step: usize,
}

impl Sender {
    pub fn new(bits: Vec<bool>, agents: usize, sender: usize, receiver: usize, anchors: &Anchors) -> Self {
        let tail = waiters(agents, sender, receiver).map(|r| anchors.of(r)).collect();
        Sender { bits, own: anchors.of(sender), target: anchors.of(receiver), tail, step: 0 }
    }

    pub fn arm(&self) -> usize {
        let l = self.bits.len();
        let s = self.step;
        if s < 2 * l {
            if s.is_multiple_of(2) && self.bits[s / 2] {
                self.target
            } else {
                self.own
            }
        } else if s == 2 * l {
            self.own
        } else if s == 2 * l + 1 {
            self.target
        } else {
            self.tail[s - 2 * l - 2]
        }
    }

    /// Returns true once the last step of the message has been played.
    pub fn observe(&mut self, _collision: bool) -> bool {
        self.step += 1;
        self.step == 2 * self.bits.len() + 2 + self.tail.len()
    }
}

#[derive(Debug, Clone)]
pub struct Receiver {
    own: usize,
    max_bits: usize,
    tail: usize,
    step: usize,
    data: Vec<bool>,
    received: Option<Vec<bool>>,
}

impl Receiver {
    pub fn new(agents: usize, rank: usize, anchors: &Anchors, max_bits: usize) -> Self {
        Receiver {
            own: anchors.of(rank),
            max_bits,
            tail: agents.saturating_sub(2),
            step: 0,
            data: Vec::new(),
            received: None,
        }
    }

    pub fn arm(&self) -> usize {
        self.own
    }

    pub fn observe(&mut self, collision: bool) -> Result<bool, CodecError> {
        let s = self.step;
        self.step += 1;
        if let Some(bits) = &self.received {
            return Ok(self.step == 2 * bits.len() + 2 + self.tail);
        }
        if s.is_multiple_of(2) {
            self.data.push(collision);
        } else if collision {
            // terminator pair: its data slot carries no bit
            self.data.pop();
            self.received = Some(std::mem::take(&mut self.data));
            return Ok(self.tail == 0);
        } else if self.data.len() > self.max_bits {
            return Err(CodecError::Desync { step: s as u64 });
        }
        Ok(false)
    }

    pub fn take(&mut self) -> Option<Vec<bool>> {
        self.received.take()
    }
}

#[derive(Debug, Clone)]
pub struct Waiter {
    own: usize,
    remaining_after_hit: usize,
    budget: usize,
    step: usize,
    countdown: Option<usize>,
}

impl Waiter {
    pub fn new(agents: usize, sender: usize, receiver: usize, rank: usize, anchors: &Anchors, max_bits: usize) -> Self {
        let pos = waiters(agents, sender, receiver).position(|r| r == rank).expect("waiter rank");
        let tail = agents - 2;
        Waiter {
            own: anchors.of(rank),
            remaining_after_hit: tail - pos - 1,
            budget: 2 * max_bits + 2 + tail,
            step: 0,
            countdown: None,
        }
    }

    pub fn arm(&self) -> usize {
        self.own
    }

    pub fn observe(&mut self, collision: bool) -> Result<bool, CodecError> {
        self.step += 1;
        match self.countdown {
            Some(0) => unreachable!("waiter observed after finishing"),
            Some(ref mut n) => *n -= 1,
            None if collision => self.countdown = Some(self.remaining_after_hit),
            None if self.step >= self.budget => return Err(CodecError::Desync { step: self.step as u64 }),
            None => return Ok(false),
        }
        Ok(self.countdown == Some(0))
    }
}

/// One agent's part in one message.
#[derive(Debug, Clone)]
pub enum Role {
    Send(Sender),
    Receive(Receiver),
    Wait(Waiter),
}

impl Role {
    pub fn arm(&self) -> usize {
        match self {
            Role::Send(s) => s.arm(),
            Role::Receive(r) => r.arm(),
            Role::Wait(w) => w.arm(),
        }
    }

    pub fn observe(&mut self, collision: bool) -> Result<bool, CodecError> {
        match self {
            Role::Send(s) => Ok(s.observe(collision)),
            Role::Receive(r) => r.observe(collision),
            Role::Wait(w) => w.observe(collision),
        }
    }
}
