//! Deliberate corruption of one backward rule, used to prove that the
//! gradient checker notices a wrong gradient. Never enabled in normal runs.

use std::sync::atomic::{AtomicU8, Ordering};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Fault {
    None = 0,
    NegateRelu = 1,
    NegateSigmoid = 2,
    NegateConvWeight = 3,
}

static ACTIVE: AtomicU8 = AtomicU8::new(Fault::None as u8);

pub fn inject(fault: Fault) {
    ACTIVE.store(fault as u8, Ordering::SeqCst);
}

pub fn clear() {
    inject(Fault::None);
}

pub(crate) fn active(fault: Fault) -> bool {
    ACTIVE.load(Ordering::Relaxed) == fault as u8
}
