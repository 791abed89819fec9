//! Bounded single-producer/single-consumer ring buffer.
//!
//! Each endpoint is owned by exactly one thread: the producer only advances
//! `tail`, the consumer only advances `head`, so no locks are needed. Debug
//! builds record the first thread to touch an endpoint and assert that no
//! other thread uses it afterwards.

use std::cell::UnsafeCell;
use std::mem::MaybeUninit;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};
use std::thread::ThreadId;

struct Shared<T> {
    slots: Box<[UnsafeCell<MaybeUninit<T>>]>,
    head: AtomicUsize,
    tail: AtomicUsize,
}

// Safety: slot access is partitioned between one producer and one consumer
// by the head/tail protocol; values cross threads so T must be Send.
unsafe impl<T: Send> Sync for Shared<T> {}
unsafe impl<T: Send> Send for Shared<T> {}

impl<T> Shared<T> {
    fn capacity(&self) -> usize {
        self.slots.len()
    }

    fn len(&self) -> usize {
        let tail = self.tail.load(Ordering::Acquire);
        let head = self.head.load(Ordering::Acquire);
        tail.wrapping_sub(head)
    }
}

impl<T> Drop for Shared<T> {
    fn drop(&mut self) {
        let head = *self.head.get_mut();
        let tail = *self.tail.get_mut();
        let cap = self.slots.len();
        let mut i = head;
        while i != tail {
            // Safety: indices in [head, tail) hold initialised values and we
            // have exclusive access in drop.
            unsafe { (*self.slots[i % cap].get()).assume_init_drop() };
            i = i.wrapping_add(1);
        }
    }
}

#[derive(Default)]
struct OwnerTag(OnceLock<ThreadId>);

impl OwnerTag {
    #[inline]
    fn check(&self) {
        if cfg!(debug_assertions) {
            let me = std::thread::current().id();
            let owner = *self.0.get_or_init(|| me);
            assert_eq!(owner, me, "SPSC endpoint used from a second thread");
        }
    }
}

pub struct Producer<T> {
    shared: Arc<Shared<T>>,
    owner: OwnerTag,
}

pub struct Consumer<T> {
    shared: Arc<Shared<T>>,
    owner: OwnerTag,
}

pub fn channel<T>(capacity: usize) -> (Producer<T>, Consumer<T>) {
    assert!(capacity > 0, "ring capacity must be positive");
    let slots = (0..capacity).map(|_| UnsafeCell::new(MaybeUninit::uninit())).collect();
    let shared = Arc::new(Shared { slots, head: AtomicUsize::new(0), tail: AtomicUsize::new(0) });
    (
        Producer { shared: Arc::clone(&shared), owner: OwnerTag::default() },
        Consumer { shared, owner: OwnerTag::default() },
    )
}

impl<T> Producer<T> {
    /// Enqueues `value`, handing it back if the ring is full.
    pub fn push(&mut self, value: T) -> Result<(), T> {
        self.owner.check();
        let tail = self.shared.tail.load(Ordering::Relaxed);
        let head = self.shared.head.load(Ordering::Acquire);
        let cap = self.shared.capacity();
        if tail.wrapping_sub(head) == cap {
            return Err(value);
        }
        // Safety: the slot at `tail` is outside [head, tail) and only the
        // producer writes it.
        unsafe { (*self.shared.slots[tail % cap].get()).write(value) };
        self.shared.tail.store(tail.wrapping_add(1), Ordering::Release);
        Ok(())
    }

    /// Occupied slots.
    pub fn len(&self) -> usize {
        self.shared.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn capacity(&self) -> usize {
        self.shared.capacity()
    }
}

impl<T> Consumer<T> {
    pub fn pop(&mut self) -> Option<T> {
        self.owner.check();
        let head = self.shared.head.load(Ordering::Relaxed);
        let tail = self.shared.tail.load(Ordering::Acquire);
        if head == tail {
            return None;
        }
        let cap = self.shared.capacity();
        // Safety: the slot at `head` was initialised by the producer before
        // it published `tail`; only the consumer reads it.
        let value = unsafe { (*self.shared.slots[head % cap].get()).assume_init_read() };
        self.shared.head.store(head.wrapping_add(1), Ordering::Release);
        Some(value)
    }

    pub fn len(&self) -> usize {
        self.shared.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fifo_and_capacity() {
        let (mut tx, mut rx) = channel(3);
        assert!(tx.push(1).is_ok());
        assert!(tx.push(2).is_ok());
        assert!(tx.push(3).is_ok());
        assert_eq!(tx.push(4), Err(4));
        assert_eq!(tx.len(), 3);
        assert_eq!(rx.pop(), Some(1));
        assert!(tx.push(4).is_ok());
        assert_eq!((rx.pop(), rx.pop(), rx.pop(), rx.pop()), (Some(2), Some(3), Some(4), None));
        assert!(rx.is_empty());
    }

    #[test]
    fn remaining_items_dropped_with_ring() {
        let marker = Arc::new(());
        {
            let (mut tx, _rx) = channel(4);
            tx.push(Arc::clone(&marker)).unwrap();
            tx.push(Arc::clone(&marker)).unwrap();
            assert_eq!(Arc::strong_count(&marker), 3);
        }
        assert_eq!(Arc::strong_count(&marker), 1);
    }

    #[test]
    fn cross_thread_transfer_preserves_order() {
        let (mut tx, mut rx) = channel::<u32>(64);
        let n = 100_000u32;
        let producer = std::thread::spawn(move || {
            let mut i = 0;
            while i < n {
                if tx.push(i).is_ok() {
                    i += 1;
                } else {
                    std::hint::spin_loop();
                }
            }
        });
        let mut expect = 0;
        while expect < n {
            if let Some(v) = rx.pop() {
                assert_eq!(v, expect);
                expect += 1;
            }
        }
        producer.join().unwrap();
    }

    #[test]
    #[cfg(debug_assertions)]
    fn endpoint_is_pinned_to_first_thread() {
        let (mut tx, _rx) = channel::<u8>(2);
        tx.push(1).unwrap();
        let res = std::thread::spawn(move || {
            std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| tx.push(2))).is_err()
        })
        .join()
        .unwrap();
        assert!(res);
    }
}
