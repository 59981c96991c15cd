//! The digital lock behind a register interface.

use super::{Access, MmioDevice, RegisterInfo};
use crate::coverage::{EdgeSink, Site, Tracer};
use crate::dut::{AssertionRegistry, DigitalLock, DutSnapshot, FsmState, LockConfig, LockDut};
use crate::error::SnapshotError;

pub const CTRL: u32 = 0x00;
pub const CODE: u32 = 0x04;
pub const STATUS: u32 = 0x08;

pub const REGISTERS: &[RegisterInfo] = &[
    RegisterInfo { offset: CTRL, name: "CTRL", access: Access::WriteOnly, description: "bit 0: soft reset of the lock" },
    RegisterInfo { offset: CODE, name: "CODE", access: Access::WriteOnly, description: "code applied to the lock for one cycle" },
    RegisterInfo { offset: STATUS, name: "STATUS", access: Access::ReadOnly, description: "bit 0: unlocked" },
];

const SITE_RD_CTRL: Site = Site::dut(0x0401);
const SITE_RD_CODE: Site = Site::dut(0x0402);
const SITE_RD_STATUS: Site = Site::dut(0x0403);
const SITE_RD_UNMAPPED: Site = Site::dut(0x0404);
const SITE_WR_CTRL_RESET: Site = Site::dut(0x0405);
const SITE_WR_CTRL_NOP: Site = Site::dut(0x0406);
const SITE_WR_CODE: Site = Site::dut(0x0407);
const SITE_WR_STATUS: Site = Site::dut(0x0408);
const SITE_WR_UNMAPPED: Site = Site::dut(0x0409);
const SITE_IDLE: Site = Site::dut(0x040A);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pending {
    None,
    Reset,
    Code(u32),
}

/// Registers: `CTRL` (soft reset), `CODE` (one code per write) and the
/// read-only `STATUS`. Only `CODE` writes advance the lock.
#[derive(Debug, Clone)]
pub struct LockPeripheral {
    lock: DigitalLock,
    pending: Pending,
    descriptor: String,
    assertions: AssertionRegistry<DigitalLock>,
}

impl LockPeripheral {
    pub fn new(config: LockConfig) -> Self {
        let mut assertions = AssertionRegistry::new();
        assertions.register(LockDut::UNLOCK_ASSERTION, |l: &DigitalLock| !l.unlocked());
        let lock = DigitalLock::new(config);
        let descriptor = format!("lock_periph/{}", lock.descriptor());
        LockPeripheral { lock, pending: Pending::None, descriptor, assertions }
    }

    pub fn with_unlock_assertion(mut self, armed: bool) -> Self {
        self.assertions.set_armed(LockDut::UNLOCK_ASSERTION, armed);
        self
    }

    pub fn lock(&self) -> &DigitalLock {
        &self.lock
    }
}

impl MmioDevice for LockPeripheral {
    fn name(&self) -> String {
        self.descriptor.clone()
    }

    fn register_map(&self) -> &'static [RegisterInfo] {
        REGISTERS
    }

    fn address_width(&self) -> u32 {
        4
    }

    fn read(&mut self, offset: u32, tracer: &mut Tracer) -> Option<u32> {
        match offset {
            CTRL => {
                tracer.hit(SITE_RD_CTRL);
                Some(0)
            }
            CODE => {
                tracer.hit(SITE_RD_CODE);
                Some(0)
            }
            STATUS => {
                tracer.hit(SITE_RD_STATUS);
                Some(u32::from(self.lock.unlocked()))
            }
            _ => {
                tracer.hit(SITE_RD_UNMAPPED);
                None
            }
        }
    }

    fn write(&mut self, offset: u32, data: u32, tracer: &mut Tracer) -> bool {
        match offset {
            CTRL if data & 1 == 1 => {
                tracer.hit(SITE_WR_CTRL_RESET);
                self.pending = Pending::Reset;
                true
            }
            CTRL => {
                tracer.hit(SITE_WR_CTRL_NOP);
                true
            }
            CODE => {
                tracer.hit(SITE_WR_CODE);
                self.pending = Pending::Code(data);
                true
            }
            STATUS => {
                tracer.hit(SITE_WR_STATUS);
                false
            }
            _ => {
                tracer.hit(SITE_WR_UNMAPPED);
                false
            }
        }
    }

    fn tick(&mut self, tracer: &mut Tracer) {
        match std::mem::replace(&mut self.pending, Pending::None) {
            Pending::None => tracer.hit(SITE_IDLE),
            Pending::Reset => {
                self.lock.eval(false, 0, tracer);
            }
            Pending::Code(code) => {
                self.lock.eval(true, code, tracer);
            }
        }
    }

    fn reset_cycle(&mut self, tracer: &mut Tracer) {
        self.pending = Pending::None;
        self.lock.eval(false, 0, tracer);
    }

    fn power_on(&mut self) {
        self.lock = DigitalLock::new(*self.lock.config());
        self.pending = Pending::None;
    }

    fn check_assertions(&mut self) -> Option<&'static str> {
        self.assertions.check(&self.lock)
    }

    fn rearm_assertions(&mut self) {
        self.assertions.rearm();
    }

    fn snapshot(&self) -> DutSnapshot {
        let mut words = self.lock.snapshot_words().to_vec();
        words.extend(match self.pending {
            Pending::None => [0, 0],
            Pending::Reset => [1, 0],
            Pending::Code(c) => [2, c.into()],
        });
        DutSnapshot::new(self.descriptor.clone(), words)
    }

    fn restore(&mut self, snapshot: &DutSnapshot) -> Result<(), SnapshotError> {
        let words = snapshot.words_for(&self.descriptor)?;
        let (lock_words, pending) = words.split_at(words.len() - 2);
        self.lock.restore_words(lock_words);
        self.pending = match pending[0] {
            1 => Pending::Reset,
            2 => Pending::Code(pending[1] as u32),
            _ => Pending::None,
        };
        Ok(())
    }

    fn fsm_state(&self) -> Option<FsmState> {
        Some(FsmState { state: self.lock.state(), num_states: self.lock.config().num_states() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bus::BusHost;
    use crate::coverage::ScopeFilter;

    fn periph(n: u32, m: u32) -> LockPeripheral {
        LockPeripheral::new(LockConfig::new(n, m, 17).unwrap())
    }

    #[test]
    fn only_code_writes_advance() {
        let mut host = BusHost::new(periph(2, 4));
        let mut t = Tracer::new(ScopeFilter::All);
        let seq = host.device().lock().unlock_sequence().to_vec();
        host.put_full(CODE, seq[0], &mut t);
        for _ in 0..5 {
            host.idle(&mut t);
            host.get(STATUS, &mut t);
            host.put_full(CTRL, 0, &mut t);
        }
        assert_eq!(host.device().lock().state(), 1);
        host.put_full(CODE, seq[1], &mut t);
        host.put_full(CODE, seq[2], &mut t);
        assert_eq!(host.get(STATUS, &mut t), 1);
    }

    #[test]
    fn soft_reset_clears_lock() {
        let mut host = BusHost::new(periph(2, 4));
        let mut t = Tracer::new(ScopeFilter::All);
        let first = host.device().lock().unlock_sequence()[0];
        host.put_full(CODE, first, &mut t);
        host.put_full(CTRL, 1, &mut t);
        assert_eq!(host.device().lock().state(), 0);
        assert!(!host.error_flag());
    }

    #[test]
    fn write_only_registers_read_zero() {
        let mut host = BusHost::new(periph(1, 4));
        let mut t = Tracer::new(ScopeFilter::All);
        assert_eq!(host.get(CTRL, &mut t), 0);
        assert_eq!(host.get(CODE, &mut t), 0);
        assert!(!host.error_flag());
        host.get(0x0C, &mut t);
        assert!(host.error_flag());
    }

    #[test]
    fn pending_code_survives_snapshot() {
        let mut p = periph(2, 4);
        let mut t = Tracer::new(ScopeFilter::All);
        let first = p.lock().unlock_sequence()[0];
        p.write(CODE, first, &mut t);
        let s = p.snapshot();
        let mut q = periph(2, 4);
        q.restore(&s).unwrap();
        q.tick(&mut t);
        assert_eq!(q.lock().state(), 1);
        assert!(periph(3, 4).restore(&s).is_err());
    }
}
