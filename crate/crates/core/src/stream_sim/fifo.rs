use std::collections::VecDeque;

/// Bounded single-producer single-consumer stream of raw codes.
#[derive(Debug, Clone)]
pub struct StreamFifo {
    capacity: usize,
    queue: VecDeque<i32>,
    pushed: u64,
    popped: u64,
}

impl StreamFifo {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            queue: VecDeque::with_capacity(capacity),
            pushed: 0,
            popped: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn occupancy(&self) -> usize {
        self.queue.len()
    }

    pub fn space(&self) -> usize {
        self.capacity - self.queue.len()
    }

    pub fn push(&mut self, raw: i32) {
        assert!(self.queue.len() < self.capacity, "push into a full FIFO");
        self.queue.push_back(raw);
        self.pushed += 1;
    }

    pub fn pop(&mut self) -> Option<i32> {
        let v = self.queue.pop_front()?;
        self.popped += 1;
        Some(v)
    }

    pub fn pushed(&self) -> u64 {
        self.pushed
    }

    pub fn popped(&self) -> u64 {
        self.popped
    }
}
