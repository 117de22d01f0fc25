//! Flush-to-zero / denormals-are-zero for the duration of a training step.
//!
//! Saturated sigmoid units push gradients into the subnormal range, where x86
//! float arithmetic runs an order of magnitude slower. The previous control
//! word is restored on drop, so callers see no change in state.

#[cfg(target_arch = "x86_64")]
pub(crate) struct FlushGuard {
    saved: u32,
}

#[cfg(target_arch = "x86_64")]
impl FlushGuard {
    const FTZ_DAZ: u32 = 0x8040;

    pub(crate) fn new() -> Self {
        let mut saved = 0u32;
        // SAFETY: stmxcsr/ldmxcsr only touch the SSE control register of the
        // current thread; setting FTZ and DAZ cannot fault.
        unsafe {
            std::arch::asm!("stmxcsr [{}]", in(reg) &mut saved, options(nostack));
            let new = saved | Self::FTZ_DAZ;
            std::arch::asm!("ldmxcsr [{}]", in(reg) &new, options(nostack, readonly));
        }
        Self { saved }
    }
}

#[cfg(target_arch = "x86_64")]
impl Drop for FlushGuard {
    fn drop(&mut self) {
        // SAFETY: restores the value read in `new`.
        unsafe {
            std::arch::asm!("ldmxcsr [{}]", in(reg) &self.saved, options(nostack, readonly));
        }
    }
}

#[cfg(not(target_arch = "x86_64"))]
pub(crate) struct FlushGuard;

#[cfg(not(target_arch = "x86_64"))]
impl FlushGuard {
    pub(crate) fn new() -> Self {
        Self
    }
}
