//! Bounded blocking queue shared between pipeline stages.

use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};

/// What `push` does when the queue is full.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OverflowPolicy {
    /// Wait for the consumer.
    #[default]
    Block,
    /// Evict the oldest queued item.
    DropOldest,
}

impl std::str::FromStr for OverflowPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "block" => Ok(Self::Block),
            "drop-oldest" | "drop_oldest" => Ok(Self::DropOldest),
            _ => Err(format!("unknown overflow policy '{s}' (block, drop-oldest)")),
        }
    }
}

#[derive(Debug)]
struct State<T> {
    items: VecDeque<T>,
    closed: bool,
    dropped: usize,
}

#[derive(Debug)]
pub struct BoundedQueue<T> {
    state: Mutex<State<T>>,
    not_empty: Condvar,
    not_full: Condvar,
    capacity: usize,
    policy: OverflowPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Closed;

impl<T> BoundedQueue<T> {
    pub fn new(capacity: usize, policy: OverflowPolicy) -> Self {
        assert!(capacity >= 1, "queue capacity must be at least 1");
        Self {
            state: Mutex::new(State {
                items: VecDeque::with_capacity(capacity),
                closed: false,
                dropped: 0,
            }),
            not_empty: Condvar::new(),
            not_full: Condvar::new(),
            capacity,
            policy,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Enqueues `item`. Under [`OverflowPolicy::DropOldest`] a full queue
    /// evicts and returns its oldest item.
    pub fn push(&self, item: T) -> Result<Option<T>, Closed> {
        let mut s = self.state.lock().unwrap();
        let mut evicted = None;
        loop {
            if s.closed {
                return Err(Closed);
            }
            if s.items.len() < self.capacity {
                break;
            }
            match self.policy {
                OverflowPolicy::Block => s = self.not_full.wait(s).unwrap(),
                OverflowPolicy::DropOldest => {
                    evicted = s.items.pop_front();
                    s.dropped += 1;
                }
            }
        }
        s.items.push_back(item);
        self.not_empty.notify_one();
        Ok(evicted)
    }

    /// Dequeues, waiting while empty. `None` once closed and drained.
    pub fn pop(&self) -> Option<T> {
        let mut s = self.state.lock().unwrap();
        loop {
            if let Some(item) = s.items.pop_front() {
                self.not_full.notify_one();
                return Some(item);
            }
            if s.closed {
                return None;
            }
            s = self.not_empty.wait(s).unwrap();
        }
    }

    /// No more pushes; consumers drain what is left.
    pub fn close(&self) {
        self.state.lock().unwrap().closed = true;
        self.not_empty.notify_all();
        self.not_full.notify_all();
    }

    pub fn len(&self) -> usize {
        self.state.lock().unwrap().items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dropped(&self) -> usize {
        self.state.lock().unwrap().dropped
    }
}
