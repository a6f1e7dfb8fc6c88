use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use super::{DecodeError, Instr, MOp, MachineProfile};
use crate::mir::{BlockId, FunctionIR, OpId, Opcode, Operand, SecurityLabel, TempId};

/// Where a temp lives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Loc {
    Reg(u8),
    Spill(u8),
}

/// Implementation alternative of an operation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Impl {
    Default,
    /// `addi rd, rs, 0` for a move.
    AddZero,
    /// `ori rd, rs, 0` for a move.
    OrZero,
    /// Copy into a spill slot.
    Store,
    /// Copy out of a spill slot.
    Load,
    /// Copy by re-issuing the source's `li`.
    Remat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct OpPlacement {
    pub active: bool,
    pub cycle: u32,
    pub choice: Impl,
    pub swap: bool,
}

/// A scheduled and allocated function: one location per temp, one
/// placement per operation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Allocation {
    pub loc: Vec<Option<Loc>>,
    pub ops: Vec<OpPlacement>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("temp `{0}` has no location")]
    Unmapped(String),
    #[error("temp `{0}` must live in a register")]
    NotInRegister(String),
    #[error("operations {a} and {b} overlap in block {block}")]
    CycleCollision { block: BlockId, a: OpId, b: OpId },
    #[error("terminator of block {0} is not the last issued operation")]
    TerminatorNotLast(BlockId),
    #[error("operation {0}: implementation does not fit")]
    BadImpl(OpId),
    #[error("program exceeds 256 words")]
    TooLarge,
    #[error("location out of range for profile")]
    BadLocation,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct InputBinding {
    pub name: String,
    pub label: SecurityLabel,
    pub reg: u8,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MachineProgram {
    pub profile: String,
    pub function: String,
    pub inputs: Vec<InputBinding>,
    /// Memory cells used by the program's own slots; spill cells follow.
    pub slot_count: u8,
    /// `(first word, word count)` per IR block.
    pub blocks: Vec<(u16, u16)>,
    pub words: Vec<u32>,
}

const MAGIC: &[u8; 4] = b"MRSC";
const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DumpError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    Version(u8),
    #[error("truncated dump")]
    Truncated,
    #[error("invalid text field")]
    BadText,
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DumpError> {
        let s = self.buf.get(self.pos..self.pos + n).ok_or(DumpError::Truncated)?;
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, DumpError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, DumpError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, DumpError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn text(&mut self) -> Result<String, DumpError> {
        let n = self.u8()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| DumpError::BadText)
    }
}

fn put_text(out: &mut Vec<u8>, s: &str) {
    let b = &s.as_bytes()[..s.len().min(255)];
    out.push(b.len() as u8);
    out.extend_from_slice(b);
}

impl MachineProgram {
    pub fn instr(&self, idx: usize) -> Instr {
        Instr::decode(self.words[idx]).expect("program words are canonical")
    }

    pub fn decode_all(&self) -> Result<Vec<Instr>, DecodeError> {
        self.words.iter().map(|&w| Instr::decode(w)).collect()
    }

    /// Block holding word `idx`.
    pub fn block_of_word(&self, idx: usize) -> Option<BlockId> {
        self.blocks
            .iter()
            .position(|&(s, n)| n > 0 && idx >= s as usize && idx < (s + n) as usize)
    }

    /// Block entered when control reaches word `idx`.
    pub fn block_at_entry(&self, idx: usize) -> Option<BlockId> {
        self.blocks.iter().position(|&(s, n)| n > 0 && s as usize == idx)
    }

    pub fn has_branches(&self) -> bool {
        self.words
            .iter()
            .any(|&w| matches!(Instr::decode(w).map(|i| i.op), Ok(MOp::Beq | MOp::Bne)))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        put_text(&mut out, &self.profile);
        put_text(&mut out, &self.function);
        out.push(self.inputs.len() as u8);
        for i in &self.inputs {
            put_text(&mut out, &i.name);
            out.push(match i.label {
                SecurityLabel::Secret => 0,
                SecurityLabel::Public => 1,
                SecurityLabel::Random => 2,
            });
            out.push(i.reg);
        }
        out.push(self.slot_count);
        out.extend_from_slice(&(self.blocks.len() as u16).to_le_bytes());
        for &(s, n) in &self.blocks {
            out.extend_from_slice(&s.to_le_bytes());
            out.extend_from_slice(&n.to_le_bytes());
        }
        out.extend_from_slice(&(self.words.len() as u32).to_le_bytes());
        for w in &self.words {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, DumpError> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(DumpError::BadMagic);
        }
        let v = r.u8()?;
        if v != VERSION {
            return Err(DumpError::Version(v));
        }
        let profile = r.text()?;
        let function = r.text()?;
        let n = r.u8()?;
        let mut inputs = Vec::new();
        for _ in 0..n {
            let name = r.text()?;
            let label = match r.u8()? {
                0 => SecurityLabel::Secret,
                1 => SecurityLabel::Public,
                2 => SecurityLabel::Random,
                _ => return Err(DumpError::BadText),
            };
            inputs.push(InputBinding {
                name,
                label,
                reg: r.u8()?,
            });
        }
        let slot_count = r.u8()?;
        let nb = r.u16()?;
        let mut blocks = Vec::new();
        for _ in 0..nb {
            blocks.push((r.u16()?, r.u16()?));
        }
        let nw = r.u32()?;
        let mut words = Vec::new();
        for _ in 0..nw {
            let w = r.u32()?;
            Instr::decode(w)?;
            words.push(w);
        }
        if r.pos != buf.len() {
            return Err(DumpError::Truncated);
        }
        Ok(MachineProgram {
            profile,
            function,
            inputs,
            slot_count,
            blocks,
            words,
        })
    }

    /// Human-readable listing with byte addresses.
    pub fn disassemble(&self) -> String {
        let mut s = String::new();
        for (b, &(start, n)) in self.blocks.iter().enumerate() {
            let _ = writeln!(s, "bb{b}:");
            for i in start as usize..(start + n) as usize {
                let _ = writeln!(s, "  {:04x}  {:08x}  {}", i * 4, self.words[i], self.instr(i));
            }
        }
        s
    }
}

fn reg_of(f: &FunctionIR, a: &Allocation, t: TempId) -> Result<u8, EncodeError> {
    match a.loc[t] {
        Some(Loc::Reg(r)) => Ok(r),
        Some(Loc::Spill(_)) => Err(EncodeError::NotInRegister(f.temps[t].name.clone())),
        None => Err(EncodeError::Unmapped(f.temps[t].name.clone())),
    }
}

fn spill_of(f: &FunctionIR, a: &Allocation, t: TempId, op: OpId) -> Result<u8, EncodeError> {
    match a.loc[t] {
        Some(Loc::Spill(s)) => Ok(f.slots.len() as u8 + s),
        Some(Loc::Reg(_)) => Err(EncodeError::BadImpl(op)),
        None => Err(EncodeError::Unmapped(f.temps[t].name.clone())),
    }
}

fn use_temp(op: &crate::mir::Operation, i: usize) -> TempId {
    op.uses[i].temp().expect("temp operand")
}

/// Lowers one active operation; `targets` maps blocks to word indices.
fn lower(
    f: &FunctionIR,
    a: &Allocation,
    op: &crate::mir::Operation,
    targets: &[u8],
) -> Result<Instr, EncodeError> {
    let pl = a.ops[op.id];
    let def = || reg_of(f, a, op.def.expect("def"));
    let mov = |rd: u8, rs: u8| match pl.choice {
        Impl::Default => Ok(Instr::new(MOp::Mov, rd, rs, 0)),
        Impl::AddZero => Ok(Instr::new(MOp::AddI, rd, rs, 0)),
        Impl::OrZero => Ok(Instr::new(MOp::OrI, rd, rs, 0)),
        _ => Err(EncodeError::BadImpl(op.id)),
    };
    Ok(match op.opcode {
        Opcode::Add | Opcode::Sub | Opcode::Xor | Opcode::And | Opcode::Or => {
            let ra = reg_of(f, a, use_temp(op, 0))?;
            match op.uses[1] {
                Operand::Temp(t) => {
                    let rb = reg_of(f, a, t)?;
                    let (x, y) = if pl.swap { (rb, ra) } else { (ra, rb) };
                    Instr::new(MOp::alu(op.opcode, false).unwrap(), def()?, x, y)
                }
                Operand::Imm(k) => Instr::new(MOp::alu(op.opcode, true).unwrap(), def()?, ra, k),
            }
        }
        Opcode::Mov => mov(def()?, reg_of(f, a, use_temp(op, 0))?)?,
        Opcode::Copy => {
            let src = use_temp(op, 0);
            let dst = op.def.unwrap();
            match pl.choice {
                Impl::Store => Instr::new(MOp::St, spill_of(f, a, dst, op.id)?, reg_of(f, a, src)?, 0),
                Impl::Load => Instr::new(MOp::Ld, reg_of(f, a, dst)?, spill_of(f, a, src, op.id)?, 0),
                Impl::Remat => match f.def_op(src) {
                    Some(d) if d.opcode == Opcode::Li => {
                        let Operand::Imm(k) = d.uses[0] else { unreachable!() };
                        Instr::new(MOp::Li, reg_of(f, a, dst)?, k, 0)
                    }
                    _ => return Err(EncodeError::BadImpl(op.id)),
                },
                _ => mov(reg_of(f, a, dst)?, reg_of(f, a, src)?)?,
            }
        }
        Opcode::Li => {
            let Operand::Imm(k) = op.uses[0] else { unreachable!() };
            Instr::new(MOp::Li, def()?, k, 0)
        }
        Opcode::Ld => Instr::new(MOp::Ld, def()?, op.slot.unwrap() as u8, 0),
        Opcode::St => Instr::new(MOp::St, op.slot.unwrap() as u8, reg_of(f, a, use_temp(op, 0))?, 0),
        Opcode::Beq | Opcode::Bne => {
            let ra = reg_of(f, a, use_temp(op, 0))?;
            let rb = reg_of(f, a, use_temp(op, 1))?;
            let m = if op.opcode == Opcode::Beq { MOp::Beq } else { MOp::Bne };
            Instr::new(m, ra, rb, targets[op.target.unwrap()])
        }
        Opcode::B => Instr::new(MOp::B, targets[op.target.unwrap()], 0, 0),
        Opcode::Ret => Instr::new(MOp::Ret, reg_of(f, a, use_temp(op, 0))?, 0, 0),
        Opcode::Nop => Instr::nop(),
    })
}

/// Cycles an operation occupies the core under a given implementation.
pub fn op_latency(opcode: Opcode, choice: Impl, p: &MachineProfile) -> u32 {
    match (opcode, choice) {
        (Opcode::Copy, Impl::Store | Impl::Load) | (Opcode::Ld | Opcode::St, _) => p.mem_latency,
        (Opcode::B, _) => p.jump_latency,
        (Opcode::Ret, _) => p.ret_latency,
        (Opcode::Beq | Opcode::Bne, _) => p.not_taken_cost,
        _ => p.alu_latency,
    }
}

/// Emits active operations of each block in issue-cycle order; idle
/// cycles between them become `nop` words.
pub fn encode(f: &FunctionIR, a: &Allocation, p: &MachineProfile) -> Result<MachineProgram, EncodeError> {
    for loc in a.loc.iter().flatten() {
        let ok = match *loc {
            Loc::Reg(r) => r < p.num_registers,
            Loc::Spill(s) => s < p.mem_slots,
        };
        if !ok {
            return Err(EncodeError::BadLocation);
        }
    }
    // Issue order and word counts per block.
    let mut orders: Vec<Vec<(u32, &crate::mir::Operation)>> = Vec::new();
    let mut lengths = Vec::new();
    for b in &f.blocks {
        let mut ops: Vec<(u32, &crate::mir::Operation)> = b
            .ops
            .iter()
            .filter(|o| a.ops[o.id].active)
            .map(|o| (a.ops[o.id].cycle, o))
            .collect();
        ops.sort_by_key(|&(c, o)| (c, o.id));
        let mut end = 0u32;
        let mut words = 0usize;
        for (i, &(c, o)) in ops.iter().enumerate() {
            if c < end {
                return Err(EncodeError::CycleCollision {
                    block: b.id,
                    a: ops[i - 1].1.id,
                    b: o.id,
                });
            }
            if o.opcode.is_terminator() && i + 1 != ops.len() {
                return Err(EncodeError::TerminatorNotLast(b.id));
            }
            words += (c - end) as usize + 1;
            end = c + op_latency(o.opcode, a.ops[o.id].choice, p);
        }
        orders.push(ops);
        lengths.push(words);
    }
    let total: usize = lengths.iter().sum();
    if total > 256 {
        return Err(EncodeError::TooLarge);
    }
    let mut starts = Vec::new();
    let mut acc = 0usize;
    for &l in &lengths {
        starts.push(acc as u8);
        acc += l;
    }
    // A branch to the end of the program cannot happen: the last block ends in ret.
    let mut words = Vec::with_capacity(total);
    let mut blocks = Vec::new();
    for (bi, ops) in orders.iter().enumerate() {
        let start = words.len();
        let mut end = 0u32;
        for &(c, o) in ops {
            for _ in end..c {
                words.push(Instr::nop().encode());
            }
            words.push(lower(f, a, o, &starts)?.encode());
            end = c + op_latency(o.opcode, a.ops[o.id].choice, p);
        }
        debug_assert_eq!(words.len() - start, lengths[bi]);
        blocks.push((start as u16, (words.len() - start) as u16));
    }
    let mut inputs = Vec::new();
    for (t, temp) in f.inputs() {
        inputs.push(InputBinding {
            name: temp.name.clone(),
            label: temp.label().expect("validated"),
            reg: reg_of(f, a, t)?,
        });
    }
    Ok(MachineProgram {
        profile: p.name.clone(),
        function: f.name.clone(),
        inputs,
        slot_count: f.slots.len() as u8,
        blocks,
        words,
    })
}
