//! 64-bit timer with a 12-bit prescaler and an 8-bit step.
//!
//! While active, `mtime` advances by `step` once every `prescaler + 1`
//! ticks. The interrupt line is registered and equals
//! `active && mtime >= mtimecmp` after every edge.

use super::{Access, MmioDevice, RegisterInfo};
use crate::coverage::{EdgeSink, Site, Tracer};
use crate::dut::{AssertionRegistry, DutSnapshot};
use crate::error::SnapshotError;

pub const CTRL: u32 = 0x00;
pub const CFG: u32 = 0x04;
pub const MTIME_LOW: u32 = 0x08;
pub const MTIME_HIGH: u32 = 0x0C;
pub const MTIMECMP_LOW: u32 = 0x10;
pub const MTIMECMP_HIGH: u32 = 0x14;
pub const INTR_STATE: u32 = 0x18;

pub const REGISTERS: &[RegisterInfo] = &[
    RegisterInfo { offset: CTRL, name: "CTRL", access: Access::ReadWrite, description: "bit 0: active" },
    RegisterInfo { offset: CFG, name: "CFG", access: Access::ReadWrite, description: "prescaler [11:0], step [19:12]" },
    RegisterInfo { offset: MTIME_LOW, name: "MTIME_LOW", access: Access::ReadWrite, description: "mtime [31:0]" },
    RegisterInfo { offset: MTIME_HIGH, name: "MTIME_HIGH", access: Access::ReadWrite, description: "mtime [63:32]" },
    RegisterInfo { offset: MTIMECMP_LOW, name: "MTIMECMP_LOW", access: Access::ReadWrite, description: "mtimecmp [31:0]" },
    RegisterInfo { offset: MTIMECMP_HIGH, name: "MTIMECMP_HIGH", access: Access::ReadWrite, description: "mtimecmp [63:32]" },
    RegisterInfo { offset: INTR_STATE, name: "INTR_STATE", access: Access::ReadOnly, description: "bit 0: interrupt pending" },
];

const PRESCALER_MASK: u32 = 0xFFF;
const STEP_SHIFT: u32 = 12;
const STEP_MASK: u32 = 0xFF;

const SITE_RD_BASE: u16 = 0x0310;
const SITE_WR_BASE: u16 = 0x0320;
const SITE_RD_UNMAPPED: Site = Site::dut(0x0301);
const SITE_WR_UNMAPPED: Site = Site::dut(0x0302);
const SITE_WR_READONLY: Site = Site::dut(0x0303);
const SITE_INACTIVE: Site = Site::dut(0x0304);
const SITE_PRESCALE: Site = Site::dut(0x0305);
const SITE_STEP: Site = Site::dut(0x0306);
const SITE_INTR_RISE: Site = Site::dut(0x0307);
const SITE_INTR_FALL: Site = Site::dut(0x0308);
const SITE_INTR_HOLD: Site = Site::dut(0x0309);
const SITE_RESET: Site = Site::dut(0x030A);
const SITE_CTRL_ACTIVATE: Site = Site::dut(0x030B);
const SITE_CTRL_DEACTIVATE: Site = Site::dut(0x030C);

fn reg_site(base: u16, offset: u32) -> Site {
    Site::dut(base + (offset / 4) as u16)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct TimerRegs {
    mtime: u64,
    mtimecmp: u64,
    prescaler: u32,
    step: u32,
    active: bool,
    intr: bool,
    prescale_count: u32,
}

impl Default for TimerRegs {
    fn default() -> Self {
        TimerRegs { mtime: 0, mtimecmp: 0, prescaler: 0, step: 1, active: false, intr: false, prescale_count: 0 }
    }
}

impl TimerRegs {
    fn compare(&self) -> bool {
        self.active && self.mtime >= self.mtimecmp
    }
}

#[derive(Debug, Clone)]
pub struct TimerDevice {
    regs: TimerRegs,
    assertions: AssertionRegistry<TimerRegs>,
}

impl Default for TimerDevice {
    fn default() -> Self {
        Self::new()
    }
}

impl TimerDevice {
    pub fn new() -> Self {
        let mut assertions = AssertionRegistry::new();
        assertions.register("intr_matches_compare", |r: &TimerRegs| r.intr == r.compare());
        assertions.register("prescale_count_in_range", |r: &TimerRegs| r.prescale_count <= PRESCALER_MASK);
        TimerDevice { regs: TimerRegs::default(), assertions }
    }

    /// Sets the configuration directly, bypassing the bus.
    pub fn configure(&mut self, prescaler: u32, step: u32, active: bool) {
        self.regs.prescaler = prescaler & PRESCALER_MASK;
        self.regs.step = step & STEP_MASK;
        self.regs.active = active;
    }

    pub fn mtime(&self) -> u64 {
        self.regs.mtime
    }

    pub fn mtimecmp(&self) -> u64 {
        self.regs.mtimecmp
    }

    pub fn intr(&self) -> bool {
        self.regs.intr
    }

    pub fn active(&self) -> bool {
        self.regs.active
    }
}

fn set_low(word: u64, v: u32) -> u64 {
    (word & !0xFFFF_FFFF) | u64::from(v)
}

fn set_high(word: u64, v: u32) -> u64 {
    (word & 0xFFFF_FFFF) | (u64::from(v) << 32)
}

impl MmioDevice for TimerDevice {
    fn name(&self) -> String {
        "timer".to_string()
    }

    fn register_map(&self) -> &'static [RegisterInfo] {
        REGISTERS
    }

    fn address_width(&self) -> u32 {
        5
    }

    fn read(&mut self, offset: u32, tracer: &mut Tracer) -> Option<u32> {
        let r = &self.regs;
        let value = match offset {
            CTRL => u32::from(r.active),
            CFG => r.prescaler | (r.step << STEP_SHIFT),
            MTIME_LOW => r.mtime as u32,
            MTIME_HIGH => (r.mtime >> 32) as u32,
            MTIMECMP_LOW => r.mtimecmp as u32,
            MTIMECMP_HIGH => (r.mtimecmp >> 32) as u32,
            INTR_STATE => u32::from(r.intr),
            _ => {
                tracer.hit(SITE_RD_UNMAPPED);
                return None;
            }
        };
        tracer.hit(reg_site(SITE_RD_BASE, offset));
        Some(value)
    }

    fn write(&mut self, offset: u32, data: u32, tracer: &mut Tracer) -> bool {
        let r = &mut self.regs;
        match offset {
            CTRL => {
                let active = data & 1 == 1;
                if active != r.active {
                    tracer.hit(if active { SITE_CTRL_ACTIVATE } else { SITE_CTRL_DEACTIVATE });
                }
                r.active = active;
            }
            CFG => {
                r.prescaler = data & PRESCALER_MASK;
                r.step = (data >> STEP_SHIFT) & STEP_MASK;
            }
            MTIME_LOW => r.mtime = set_low(r.mtime, data),
            MTIME_HIGH => r.mtime = set_high(r.mtime, data),
            MTIMECMP_LOW => r.mtimecmp = set_low(r.mtimecmp, data),
            MTIMECMP_HIGH => r.mtimecmp = set_high(r.mtimecmp, data),
            INTR_STATE => {
                tracer.hit(SITE_WR_READONLY);
                return false;
            }
            _ => {
                tracer.hit(SITE_WR_UNMAPPED);
                return false;
            }
        }
        tracer.hit(reg_site(SITE_WR_BASE, offset));
        true
    }

    fn tick(&mut self, tracer: &mut Tracer) {
        let r = &mut self.regs;
        if !r.active {
            tracer.hit(SITE_INACTIVE);
        } else if r.prescale_count < r.prescaler {
            tracer.hit(SITE_PRESCALE);
            r.prescale_count += 1;
        } else {
            tracer.hit(SITE_STEP);
            r.prescale_count = 0;
            r.mtime = r.mtime.wrapping_add(u64::from(r.step));
        }
        let intr = r.compare();
        match (r.intr, intr) {
            (false, true) => tracer.hit(SITE_INTR_RISE),
            (true, false) => tracer.hit(SITE_INTR_FALL),
            (true, true) => tracer.hit(SITE_INTR_HOLD),
            (false, false) => {}
        }
        r.intr = intr;
    }

    fn reset_cycle(&mut self, tracer: &mut Tracer) {
        tracer.hit(SITE_RESET);
        self.regs = TimerRegs::default();
    }

    fn power_on(&mut self) {
        *self = TimerDevice::new();
    }

    fn check_assertions(&mut self) -> Option<&'static str> {
        self.assertions.check(&self.regs)
    }

    fn rearm_assertions(&mut self) {
        self.assertions.rearm();
    }

    fn snapshot(&self) -> DutSnapshot {
        let r = &self.regs;
        DutSnapshot::new(
            self.name(),
            vec![
                r.mtime,
                r.mtimecmp,
                r.prescaler.into(),
                r.step.into(),
                r.active.into(),
                r.intr.into(),
                r.prescale_count.into(),
            ],
        )
    }

    fn restore(&mut self, snapshot: &DutSnapshot) -> Result<(), SnapshotError> {
        let w = snapshot.words_for(&self.name())?;
        self.regs = TimerRegs {
            mtime: w[0],
            mtimecmp: w[1],
            prescaler: w[2] as u32,
            step: w[3] as u32,
            active: w[4] != 0,
            intr: w[5] != 0,
            prescale_count: w[6] as u32,
        };
        Ok(())
    }
}
