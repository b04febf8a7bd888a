//! Flush-to-zero scope for training and inference.
//!
//! A saturated softmax drives output deltas, and through them the dense
//! gradients, into the subnormal range, where x86 arithmetic slows by
//! orders of magnitude. Inside the scope the FTZ and DAZ bits are set on
//! the calling thread and on every rayon worker.

use std::cell::Cell;

thread_local! {
    static STATE: Cell<(usize, u32)> = const { Cell::new((0, 0)) };
}

#[cfg(target_arch = "x86_64")]
mod csr {
    const FTZ_DAZ: u32 = (1 << 15) | (1 << 6);

    pub fn read() -> u32 {
        let mut v: u32 = 0;
        // SAFETY: stmxcsr stores the SSE control word to a valid local.
        unsafe { std::arch::asm!("stmxcsr [{}]", in(reg) &mut v, options(nostack, preserves_flags)) };
        v
    }

    pub fn write(v: u32) {
        // SAFETY: ldmxcsr loads a control word previously read from this
        // thread with only the FTZ/DAZ bits changed.
        unsafe { std::arch::asm!("ldmxcsr [{}]", in(reg) &v, options(nostack, preserves_flags)) };
    }

    pub fn flushed(v: u32) -> u32 {
        v | FTZ_DAZ
    }
}

#[cfg(not(target_arch = "x86_64"))]
mod csr {
    pub fn read() -> u32 {
        0
    }

    pub fn write(_: u32) {}

    pub fn flushed(v: u32) -> u32 {
        v
    }
}

fn enter() {
    STATE.with(|s| {
        let (depth, saved) = s.get();
        if depth == 0 {
            let old = csr::read();
            csr::write(csr::flushed(old));
            s.set((1, old));
        } else {
            s.set((depth + 1, saved));
        }
    });
}

fn leave() {
    STATE.with(|s| {
        let (depth, saved) = s.get();
        match depth {
            0 => {}
            1 => {
                csr::write(saved);
                s.set((0, 0));
            }
            _ => s.set((depth - 1, saved)),
        }
    });
}

/// Restores the previous floating-point mode on drop.
pub struct FlushGuard(());

impl FlushGuard {
    pub fn new() -> Self {
        enter();
        rayon::broadcast(|_| enter());
        FlushGuard(())
    }
}

impl Default for FlushGuard {
    fn default() -> Self {
        Self::new()
    }
}

impl Drop for FlushGuard {
    fn drop(&mut self) {
        rayon::broadcast(|_| leave());
        leave();
    }
}
