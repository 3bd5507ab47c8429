//! Transitions and the experience-replay ring buffer.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::session::TurnRecord;
use crate::vocab::TokenId;
use crate::world::WorldState;

/// One learner turn plus what is needed to recompute the next state.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub world: WorldState,
    pub turn: TurnRecord,
    /// The teacher's next utterance in the same session; `None` at the last step.
    pub next_teacher: Option<Vec<TokenId>>,
}

impl Transition {
    pub fn is_terminal(&self) -> bool {
        self.next_teacher.is_none()
    }
}

/// Pairs each turn of a session with the teacher utterance that follows it.
pub fn transitions_from_session(world: &WorldState, records: Vec<TurnRecord>) -> Vec<Transition> {
    let nexts: Vec<Option<Vec<TokenId>>> =
        (0..records.len()).map(|i| records.get(i + 1).map(|r| r.teacher.clone())).collect();
    records
        .into_iter()
        .zip(nexts)
        .map(|(turn, next_teacher)| Transition { world: world.clone(), turn, next_teacher })
        .collect()
}

/// Fixed-capacity ring buffer with its own sampling generator.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    /// Slot overwritten by the next push once the buffer is full.
    head: usize,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Self {
        assert!(capacity >= 1, "replay capacity must be at least 1");
        Self { capacity, items: Vec::new(), head: 0, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[Transition] {
        &self.items
    }

    pub fn head(&self) -> usize {
        self.head
    }

    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    /// Rebuilds a buffer from checkpointed parts.
    pub fn from_parts(capacity: usize, items: Vec<Transition>, head: usize, rng: ChaCha8Rng) -> Self {
        assert!(items.len() <= capacity && head < capacity.max(1));
        Self { capacity, items, head, rng }
    }

    /// Appends, evicting the oldest item when full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    /// `min(n, len)` distinct items, uniformly at random.
    pub fn sample(&mut self, n: usize) -> Vec<Transition> {
        let n = n.min(self.items.len());
        index::sample(&mut self.rng, self.items.len(), n).into_iter().map(|i| self.items[i].clone()).collect()
    }
}

/// Pushes `fresh` then returns a uniform sample of `min(n, len)` items.
pub fn replay_push_sample(buffer: &mut ReplayBuffer, fresh: &[Transition], n: usize) -> Vec<Transition> {
    for t in fresh {
        buffer.push(t.clone());
    }
    buffer.sample(n)
}
