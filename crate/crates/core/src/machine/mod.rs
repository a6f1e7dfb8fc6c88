//! MiniRISC: a non-pipelined, single-issue 8-bit machine.
//!
//! Every instruction is one 4-byte word `[opcode, a, b, c]` and occupies the
//! core for its full latency. A taken conditional branch pays an extra
//! `taken_branch_overhead` on top of its base cost.

mod encode;
mod interp;
mod leak;

use std::fmt;

use serde::Serialize;
use thiserror::Error;

pub use encode::{encode, op_latency, Allocation, DumpError, EncodeError, Impl, InputBinding, Loc, MachineProgram, OpPlacement};
pub use interp::{run, run_batch, run_observed, ExecError, ExecTrace, Observer, Outcome, TraceStep, LANES};
pub use leak::{hd_leak_points, LeakPoint, Site, SiteKind};

/// Data memory size in cells.
pub const MEM_CELLS: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[repr(u8)]
pub enum MOp {
    Nop = 0x00,
    Add = 0x01,
    Sub = 0x02,
    Xor = 0x03,
    And = 0x04,
    Or = 0x05,
    Mov = 0x06,
    Li = 0x07,
    Ld = 0x08,
    St = 0x09,
    Beq = 0x0A,
    Bne = 0x0B,
    B = 0x0C,
    Ret = 0x0D,
    AddI = 0x11,
    SubI = 0x12,
    XorI = 0x13,
    AndI = 0x14,
    OrI = 0x15,
}

impl MOp {
    pub const ALL: [MOp; 19] = [
        MOp::Nop,
        MOp::Add,
        MOp::Sub,
        MOp::Xor,
        MOp::And,
        MOp::Or,
        MOp::Mov,
        MOp::Li,
        MOp::Ld,
        MOp::St,
        MOp::Beq,
        MOp::Bne,
        MOp::B,
        MOp::Ret,
        MOp::AddI,
        MOp::SubI,
        MOp::XorI,
        MOp::AndI,
        MOp::OrI,
    ];

    pub fn from_byte(b: u8) -> Option<MOp> {
        MOp::ALL.into_iter().find(|op| *op as u8 == b)
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            MOp::Nop => "nop",
            MOp::Add => "add",
            MOp::Sub => "sub",
            MOp::Xor => "xor",
            MOp::And => "and",
            MOp::Or => "or",
            MOp::Mov => "mov",
            MOp::Li => "li",
            MOp::Ld => "ld",
            MOp::St => "st",
            MOp::Beq => "beq",
            MOp::Bne => "bne",
            MOp::B => "b",
            MOp::Ret => "ret",
            MOp::AddI => "addi",
            MOp::SubI => "subi",
            MOp::XorI => "xori",
            MOp::AndI => "andi",
            MOp::OrI => "ori",
        }
    }

    pub fn is_alu_reg(self) -> bool {
        matches!(self, MOp::Add | MOp::Sub | MOp::Xor | MOp::And | MOp::Or)
    }

    pub fn is_alu_imm(self) -> bool {
        matches!(self, MOp::AddI | MOp::SubI | MOp::XorI | MOp::AndI | MOp::OrI)
    }

    pub fn is_control(self) -> bool {
        matches!(self, MOp::Beq | MOp::Bne | MOp::B | MOp::Ret)
    }

    /// Register-form ALU op for an IR opcode.
    pub fn alu(op: crate::mir::Opcode, imm: bool) -> Option<MOp> {
        use crate::mir::Opcode as O;
        let base = match op {
            O::Add => MOp::Add,
            O::Sub => MOp::Sub,
            O::Xor => MOp::Xor,
            O::And => MOp::And,
            O::Or => MOp::Or,
            _ => return None,
        };
        if imm {
            MOp::from_byte(base as u8 | 0x10)
        } else {
            Some(base)
        }
    }

    pub fn apply(self, x: u8, y: u8) -> u8 {
        match self {
            MOp::Add | MOp::AddI => x.wrapping_add(y),
            MOp::Sub | MOp::SubI => x.wrapping_sub(y),
            MOp::Xor | MOp::XorI => x ^ y,
            MOp::And | MOp::AndI => x & y,
            MOp::Or | MOp::OrI => x | y,
            _ => unreachable!("not an ALU op"),
        }
    }
}

/// A decoded instruction word.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Instr {
    pub op: MOp,
    pub a: u8,
    pub b: u8,
    pub c: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("invalid opcode byte {0:#04x}")]
    InvalidOpcode(u8),
    #[error("non-zero unused operand byte in {0:#010x}")]
    NonCanonical(u32),
}

impl Instr {
    pub fn new(op: MOp, a: u8, b: u8, c: u8) -> Self {
        Instr { op, a, b, c }
    }

    pub fn nop() -> Self {
        Instr::new(MOp::Nop, 0, 0, 0)
    }

    pub fn encode(self) -> u32 {
        u32::from_le_bytes([self.op as u8, self.a, self.b, self.c])
    }

    /// Inverse of [`Instr::encode`]; unused operand bytes must be zero.
    pub fn decode(word: u32) -> Result<Instr, DecodeError> {
        let [o, a, b, c] = word.to_le_bytes();
        let op = MOp::from_byte(o).ok_or(DecodeError::InvalidOpcode(o))?;
        let used = match op {
            MOp::Nop => 0,
            MOp::B | MOp::Ret => 1,
            MOp::Mov | MOp::Li | MOp::Ld | MOp::St => 2,
            _ => 3,
        };
        let bytes = [a, b, c];
        if bytes[used..].iter().any(|&x| x != 0) {
            return Err(DecodeError::NonCanonical(word));
        }
        Ok(Instr { op, a, b, c })
    }
}

impl fmt::Display for Instr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = self.op.mnemonic();
        match self.op {
            MOp::Nop => write!(f, "{m}"),
            MOp::Add | MOp::Sub | MOp::Xor | MOp::And | MOp::Or => {
                write!(f, "{m} r{}, r{}, r{}", self.a, self.b, self.c)
            }
            MOp::AddI | MOp::SubI | MOp::XorI | MOp::AndI | MOp::OrI => {
                write!(f, "{m} r{}, r{}, #{}", self.a, self.b, self.c)
            }
            MOp::Mov => write!(f, "{m} r{}, r{}", self.a, self.b),
            MOp::Li => write!(f, "{m} r{}, #{}", self.a, self.b),
            MOp::Ld => write!(f, "{m} r{}, [{}]", self.a, self.b),
            MOp::St => write!(f, "{m} [{}], r{}", self.a, self.b),
            MOp::Beq | MOp::Bne => write!(f, "{m} r{}, r{}, @{}", self.a, self.b, self.c as u32 * 4),
            MOp::B => write!(f, "{m} @{}", self.a as u32 * 4),
            MOp::Ret => write!(f, "{m} r{}", self.a),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MachineProfile {
    pub name: String,
    pub num_registers: u8,
    /// Spill slots available to the allocator, after the program's own slots.
    pub mem_slots: u8,
    pub alu_latency: u32,
    pub mem_latency: u32,
    pub jump_latency: u32,
    pub ret_latency: u32,
    pub not_taken_cost: u32,
    pub taken_branch_overhead: u32,
}

impl MachineProfile {
    fn base(name: &str, num_registers: u8, mem_slots: u8) -> Self {
        MachineProfile {
            name: name.into(),
            num_registers,
            mem_slots,
            alu_latency: 1,
            mem_latency: 2,
            jump_latency: 3,
            ret_latency: 1,
            not_taken_cost: 1,
            taken_branch_overhead: 2,
        }
    }

    /// Thumb-like register pressure.
    pub fn tight8() -> Self {
        Self::base("tight8", 8, 4)
    }

    /// Mips-like register file.
    pub fn wide32() -> Self {
        Self::base("wide32", 32, 8)
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "tight8" => Some(Self::tight8()),
            "wide32" => Some(Self::wide32()),
            _ => None,
        }
    }

    pub fn latency(&self, op: MOp) -> u32 {
        match op {
            MOp::Ld | MOp::St => self.mem_latency,
            MOp::B => self.jump_latency,
            MOp::Ret => self.ret_latency,
            MOp::Beq | MOp::Bne => self.not_taken_cost,
            _ => self.alu_latency,
        }
    }

    /// Total locations available to temps: registers then spill slots.
    pub fn locations(&self) -> usize {
        self.num_registers as usize + self.mem_slots as usize
    }
}
