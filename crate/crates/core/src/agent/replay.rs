use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ACTION_DIM, OBS_DIM};

/// One stored step. Observations are normalized; the action is the actor's
/// unit-interval output (after noise and clamping), before scaling to kWh.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: [f64; OBS_DIM],
    pub a: [f64; ACTION_DIM],
    pub r: f64,
    pub s_next: [f64; OBS_DIM],
    pub terminal: bool,
}

/// Finite ring cache; once full, each push evicts the oldest transition.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            capacity,
            items: Vec::new(),
            next: 0,
        }
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

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Contents from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity {
            0
        } else {
            self.next
        };
        self.items[split..].iter().chain(&self.items[..split])
    }

    /// `n` uniform draws with replacement, or `None` when fewer than `n`
    /// transitions are stored.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Option<Minibatch> {
        if self.items.len() < n || n == 0 {
            return None;
        }
        let picks: Vec<&Transition> = (0..n)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect();
        Some(Minibatch::from_transitions(picks))
    }
}

/// Column-stacked transitions, one row per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Minibatch {
    pub s: Array2<f64>,
    pub a: Array2<f64>,
    pub r: Array1<f64>,
    pub s_next: Array2<f64>,
    pub terminal: Array1<bool>,
}

impl Minibatch {
    pub fn from_transitions<'a, I>(items: I) -> Self
    where
        I: IntoIterator<Item = &'a Transition>,
    {
        let items: Vec<&Transition> = items.into_iter().collect();
        let n = items.len();
        let mut batch = Minibatch {
            s: Array2::zeros((n, OBS_DIM)),
            a: Array2::zeros((n, ACTION_DIM)),
            r: Array1::zeros(n),
            s_next: Array2::zeros((n, OBS_DIM)),
            terminal: Array1::from_elem(n, false),
        };
        for (i, t) in items.iter().enumerate() {
            batch.s.row_mut(i).assign(&Array1::from(t.s.to_vec()));
            batch.a.row_mut(i).assign(&Array1::from(t.a.to_vec()));
            batch.r[i] = t.r;
            batch.s_next.row_mut(i).assign(&Array1::from(t.s_next.to_vec()));
            batch.terminal[i] = t.terminal;
        }
        batch
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }
}
