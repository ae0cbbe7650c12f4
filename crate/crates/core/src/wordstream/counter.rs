//! Word-counting stage: emits the length in words of each message it sees.

use super::{Consumer, Producer, StreamWord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
enum CountState {
    #[default]
    Idle,
    Count,
}

/// Two-state counting FSM. Reads at most one word per poll and never reads
/// while its output is full, so no word is lost to backpressure.
#[derive(Debug, Default)]
pub struct MessageCounter {
    state: CountState,
    counter: usize,
}

impl MessageCounter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns true if a word was consumed.
    pub fn poll(&mut self, input: &Consumer<StreamWord>, lengths: &Producer<usize>) -> bool {
        if lengths.is_full() {
            return false;
        }
        let Some(word) = input.try_read() else {
            return false;
        };
        match self.state {
            CountState::Idle => self.counter = 1,
            CountState::Count => self.counter += 1,
        }
        if word.last {
            // free slot checked above and we are the only producer
            let _ = lengths.try_write(self.counter);
            self.state = CountState::Idle;
        } else {
            self.state = CountState::Count;
        }
        true
    }
}

/// Consumes words up to and including the first with `last` set and returns
/// how many were consumed. `None` if the iterator ends first.
pub fn count_message_words(words: &mut impl Iterator<Item = StreamWord>) -> Option<usize> {
    let mut n = 0;
    for w in words {
        n += 1;
        if w.last {
            return Some(n);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wordstream::{channel, pack};

    fn msg(words: usize) -> Vec<StreamWord> {
        pack(&vec![b'x'; words * 8])
    }

    // Scalar oracle: lengths of the runs terminated by `last`.
    fn oracle(words: &[StreamWord]) -> Vec<usize> {
        let mut out = Vec::new();
        let mut run = 0;
        for w in words {
            run += 1;
            if w.last {
                out.push(run);
                run = 0;
            }
        }
        out
    }

    #[test]
    fn single_word() {
        assert_eq!(count_message_words(&mut msg(1).into_iter()), Some(1));
    }

    #[test]
    fn three_words() {
        assert_eq!(count_message_words(&mut msg(3).into_iter()), Some(3));
    }

    #[test]
    fn back_to_back_messages() {
        let mut stream = msg(2);
        stream.extend(msg(5));
        let expected = oracle(&stream);
        assert_eq!(expected, vec![2, 5]);
        let mut it = stream.into_iter();
        assert_eq!(count_message_words(&mut it), Some(2));
        assert_eq!(count_message_words(&mut it), Some(5));
        assert_eq!(count_message_words(&mut it), None);
    }

    #[test]
    fn fsm_stalls_on_full_output() {
        let (in_tx, in_rx) = channel(16).unwrap();
        let (out_tx, out_rx) = channel(1).unwrap();
        let mut stream = msg(1);
        stream.extend(msg(3));
        stream.extend(msg(2));
        let expected = oracle(&stream);
        for w in stream {
            in_tx.try_write(w).unwrap();
        }
        let mut fsm = MessageCounter::new();
        let mut got = Vec::new();
        for round in 0..64 {
            fsm.poll(&in_rx, &out_tx);
            // drain only every third round to force stalls
            if round % 3 == 0 {
                if let Some(n) = out_rx.try_read() {
                    got.push(n);
                }
            }
        }
        assert_eq!(got, expected);
    }
}
