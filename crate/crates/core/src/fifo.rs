//! Small bounded queue for buffers inside a stage.

use std::collections::VecDeque;

#[derive(Debug)]
pub(crate) struct Fifo<T> {
    q: VecDeque<T>,
    cap: usize,
}

impl<T> Fifo<T> {
    pub fn new(cap: usize) -> Self {
        assert!(cap > 0);
        Fifo { q: VecDeque::with_capacity(cap), cap }
    }

    #[inline]
    pub fn has_room(&self) -> bool {
        self.q.len() < self.cap
    }

    #[inline]
    pub fn push(&mut self, item: T) {
        debug_assert!(self.has_room(), "fifo overflow");
        self.q.push_back(item);
    }

    #[inline]
    pub fn pop(&mut self) -> Option<T> {
        self.q.pop_front()
    }

    #[inline]
    pub fn front(&self) -> Option<&T> {
        self.q.front()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }
}
