//! Bounded single-producer single-consumer channel with non-blocking ends.
//!
//! Stages are written against `try_read`/`try_write`; a full or empty channel
//! is a normal outcome, not an error. Each end is owned by exactly one stage
//! and neither end is `Clone`.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use crossbeam_queue::ArrayQueue;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ChannelError {
    #[error("channel capacity must be positive")]
    ZeroCapacity,
}

struct Shared<T> {
    queue: ArrayQueue<T>,
    high_watermark: AtomicUsize,
}

/// Writing end of a bounded channel.
pub struct Producer<T> {
    shared: Arc<Shared<T>>,
}

/// Reading end of a bounded channel.
pub struct Consumer<T> {
    shared: Arc<Shared<T>>,
}

/// Creates a channel holding at most `capacity` items.
pub fn channel<T>(capacity: usize) -> Result<(Producer<T>, Consumer<T>), ChannelError> {
    if capacity == 0 {
        return Err(ChannelError::ZeroCapacity);
    }
    let shared = Arc::new(Shared { queue: ArrayQueue::new(capacity), high_watermark: AtomicUsize::new(0) });
    Ok((Producer { shared: shared.clone() }, Consumer { shared }))
}

impl<T> Producer<T> {
    /// Appends `item` unless the channel is full, in which case the item is
    /// handed back untouched.
    #[inline]
    pub fn try_write(&self, item: T) -> Result<(), T> {
        self.shared.queue.push(item)?;
        let len = self.shared.queue.len();
        self.shared.high_watermark.fetch_max(len, Ordering::Relaxed);
        Ok(())
    }

    /// Spins (yielding) until the item is accepted.
    pub fn write_blocking(&self, mut item: T) {
        loop {
            match self.try_write(item) {
                Ok(()) => return,
                Err(back) => {
                    item = back;
                    std::thread::yield_now();
                }
            }
        }
    }

    #[inline]
    pub fn is_full(&self) -> bool {
        self.shared.queue.is_full()
    }

    /// Free slots at the time of the call. Only the producer adds items, so
    /// the real value can only grow until the next write.
    #[inline]
    pub fn free(&self) -> usize {
        self.shared.queue.capacity() - self.shared.queue.len()
    }

    pub fn capacity(&self) -> usize {
        self.shared.queue.capacity()
    }

    pub fn len(&self) -> usize {
        self.shared.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shared.queue.is_empty()
    }

    pub fn high_watermark(&self) -> usize {
        self.shared.high_watermark.load(Ordering::Relaxed)
    }
}

impl<T> Consumer<T> {
    /// Removes and returns the oldest item, if any.
    #[inline]
    pub fn try_read(&self) -> Option<T> {
        self.shared.queue.pop()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.shared.queue.is_empty()
    }

    pub fn len(&self) -> usize {
        self.shared.queue.len()
    }

    pub fn capacity(&self) -> usize {
        self.shared.queue.capacity()
    }

    pub fn high_watermark(&self) -> usize {
        self.shared.high_watermark.load(Ordering::Relaxed)
    }
}
