use thiserror::Error;

use super::leak::SiteKind;
use super::{Instr, MOp, MachineProfile, MachineProgram, MEM_CELLS};
use crate::mir::BlockId;

/// Lanes evaluated together by [`run_batch`].
pub const LANES: usize = 256;

const STEP_LIMIT: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExecError {
    #[error("invalid instruction word at {addr:#06x}")]
    InvalidInstruction { addr: u32 },
    #[error("control fell off the end of the program")]
    FellOffEnd,
    #[error("expected {expected} inputs, got {got}")]
    InputArity { expected: usize, got: usize },
    #[error("register r{0} outside the profile")]
    BadRegister(u8),
    #[error("step limit exceeded")]
    StepLimit,
    #[error("conditional branch in batched execution")]
    NotBranchFree,
}

/// Callbacks fired while executing.
pub trait Observer {
    fn issue(&mut self, _addr: u32, _cycle: u64, _instr: Instr) {}
    fn reg_write(&mut self, _addr: u32, _reg: u8, _old: u8, _new: u8) {}
    fn bus(&mut self, _addr: u32, _old: u8, _new: u8) {}
}

impl Observer for () {}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Outcome {
    pub ret: u8,
    pub cycles: u64,
    /// Non-empty blocks entered, with the cycle at entry.
    pub path: Vec<(BlockId, u64)>,
}

impl Outcome {
    /// Entry cycle of block `b`, or of the first later block on the path
    /// when `b` holds no code.
    pub fn entry_cycle(&self, b: BlockId) -> Option<u64> {
        self.path.iter().find(|&&(x, _)| x >= b).map(|&(_, c)| c)
    }

    pub fn visits(&self, b: BlockId) -> bool {
        self.path.iter().any(|&(x, _)| x == b)
    }
}

fn word_blocks(m: &MachineProgram) -> Vec<BlockId> {
    let mut map = vec![usize::MAX; m.words.len()];
    for (b, &(s, n)) in m.blocks.iter().enumerate() {
        for i in s as usize..(s + n) as usize {
            map[i] = b;
        }
    }
    map
}

fn check_reg(p: &MachineProfile, r: u8) -> Result<usize, ExecError> {
    if r < p.num_registers {
        Ok(r as usize)
    } else {
        Err(ExecError::BadRegister(r))
    }
}

/// Executes `m` with inputs given in the order of `m.inputs`.
pub fn run_observed<O: Observer>(
    m: &MachineProgram,
    inputs: &[u8],
    p: &MachineProfile,
    obs: &mut O,
) -> Result<Outcome, ExecError> {
    if inputs.len() != m.inputs.len() {
        return Err(ExecError::InputArity {
            expected: m.inputs.len(),
            got: inputs.len(),
        });
    }
    let mut regs = [0u8; 256];
    for (b, &v) in m.inputs.iter().zip(inputs) {
        regs[check_reg(p, b.reg)?] = v;
    }
    let mut mem = [0u8; MEM_CELLS];
    let mut bus = 0u8;
    let blocks = word_blocks(m);
    let mut pc = 0usize;
    let mut cycles = 0u64;
    let mut path: Vec<(BlockId, u64)> = Vec::new();
    for _ in 0..STEP_LIMIT {
        let Some(&word) = m.words.get(pc) else {
            return Err(ExecError::FellOffEnd);
        };
        let addr = pc as u32 * 4;
        let b = blocks[pc];
        if path.last().map(|&(x, _)| x) != Some(b) {
            path.push((b, cycles));
        }
        let i = Instr::decode(word).map_err(|_| ExecError::InvalidInstruction { addr })?;
        obs.issue(addr, cycles, i);
        cycles += p.latency(i.op) as u64;
        let mut next = pc + 1;
        let write = |regs: &mut [u8; 256], r: u8, v: u8, obs: &mut O| -> Result<(), ExecError> {
            let r_ = check_reg(p, r)?;
            obs.reg_write(addr, r, regs[r_], v);
            regs[r_] = v;
            Ok(())
        };
        match i.op {
            MOp::Nop => {}
            op if op.is_alu_reg() => {
                let v = op.apply(regs[check_reg(p, i.b)?], regs[check_reg(p, i.c)?]);
                write(&mut regs, i.a, v, obs)?;
            }
            op if op.is_alu_imm() => {
                let v = op.apply(regs[check_reg(p, i.b)?], i.c);
                write(&mut regs, i.a, v, obs)?;
            }
            MOp::Mov => {
                let v = regs[check_reg(p, i.b)?];
                write(&mut regs, i.a, v, obs)?;
            }
            MOp::Li => write(&mut regs, i.a, i.b, obs)?,
            MOp::Ld => {
                let v = mem[i.b as usize];
                obs.bus(addr, bus, v);
                bus = v;
                write(&mut regs, i.a, v, obs)?;
            }
            MOp::St => {
                let v = regs[check_reg(p, i.b)?];
                obs.bus(addr, bus, v);
                bus = v;
                mem[i.a as usize] = v;
            }
            MOp::Beq | MOp::Bne => {
                let eq = regs[check_reg(p, i.a)?] == regs[check_reg(p, i.b)?];
                if eq == (i.op == MOp::Beq) {
                    cycles += p.taken_branch_overhead as u64;
                    next = i.c as usize;
                }
            }
            MOp::B => next = i.a as usize,
            MOp::Ret => {
                return Ok(Outcome {
                    ret: regs[check_reg(p, i.a)?],
                    cycles,
                    path,
                })
            }
            _ => unreachable!(),
        }
        pc = next;
    }
    Err(ExecError::StepLimit)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceStep {
    pub addr: u32,
    /// Issue cycle.
    pub cycle: u64,
    pub instr: Instr,
    /// Register written by this instruction: `(reg, old, new)`.
    pub write: Option<(u8, u8, u8)>,
    /// Memory-bus transition: `(old, new)`.
    pub bus: Option<(u8, u8)>,
    /// Register file after the instruction.
    pub regs: Vec<u8>,
    pub bus_value: u8,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExecTrace {
    pub steps: Vec<TraceStep>,
    pub total_cycles: u64,
    pub ret: u8,
    pub path: Vec<(BlockId, u64)>,
}

struct Recorder {
    steps: Vec<TraceStep>,
    regs: Vec<u8>,
    bus: u8,
}

impl Observer for Recorder {
    fn issue(&mut self, addr: u32, cycle: u64, instr: Instr) {
        if let Some(last) = self.steps.last_mut() {
            last.regs = self.regs.clone();
            last.bus_value = self.bus;
        }
        self.steps.push(TraceStep {
            addr,
            cycle,
            instr,
            write: None,
            bus: None,
            regs: Vec::new(),
            bus_value: 0,
        });
    }
    fn reg_write(&mut self, _addr: u32, reg: u8, old: u8, new: u8) {
        self.regs[reg as usize] = new;
        self.steps.last_mut().unwrap().write = Some((reg, old, new));
    }
    fn bus(&mut self, _addr: u32, old: u8, new: u8) {
        self.bus = new;
        self.steps.last_mut().unwrap().bus = Some((old, new));
    }
}

/// Full per-instruction trace.
pub fn run(m: &MachineProgram, inputs: &[u8], p: &MachineProfile) -> Result<ExecTrace, ExecError> {
    let mut regs = vec![0u8; p.num_registers as usize];
    for (b, &v) in m.inputs.iter().zip(inputs) {
        if let Some(r) = regs.get_mut(b.reg as usize) {
            *r = v;
        }
    }
    let mut rec = Recorder {
        steps: Vec::new(),
        regs,
        bus: 0,
    };
    let out = run_observed(m, inputs, p, &mut rec)?;
    if let Some(last) = rec.steps.last_mut() {
        last.regs = rec.regs.clone();
        last.bus_value = rec.bus;
    }
    Ok(ExecTrace {
        steps: rec.steps,
        total_cycles: out.cycles,
        ret: out.ret,
        path: out.path,
    })
}

/// Runs a program without conditional branches on [`LANES`] input vectors
/// at once. `sink` receives every register write and bus update as the
/// per-lane transition value `old ^ new`. Returns the per-lane result.
pub fn run_batch<F>(
    m: &MachineProgram,
    inputs: &[[u8; LANES]],
    p: &MachineProfile,
    mut sink: F,
) -> Result<[u8; LANES], ExecError>
where
    F: FnMut(u32, SiteKind, &[u8; LANES]),
{
    if inputs.len() != m.inputs.len() {
        return Err(ExecError::InputArity {
            expected: m.inputs.len(),
            got: inputs.len(),
        });
    }
    let nregs = p.num_registers as usize;
    let mut regs = vec![[0u8; LANES]; nregs];
    for (b, v) in m.inputs.iter().zip(inputs) {
        regs[check_reg(p, b.reg)?] = *v;
    }
    let mut mem = vec![[0u8; LANES]; MEM_CELLS];
    let mut bus = [0u8; LANES];
    let mut tmp = [0u8; LANES];
    let mut pc = 0usize;
    for _ in 0..STEP_LIMIT {
        let Some(&word) = m.words.get(pc) else {
            return Err(ExecError::FellOffEnd);
        };
        let addr = pc as u32 * 4;
        let i = Instr::decode(word).map_err(|_| ExecError::InvalidInstruction { addr })?;
        let mut next = pc + 1;
        let mut dest: Option<usize> = None;
        match i.op {
            MOp::Nop => {}
            op if op.is_alu_reg() => {
                let (x, y) = (check_reg(p, i.b)?, check_reg(p, i.c)?);
                for l in 0..LANES {
                    tmp[l] = op.apply(regs[x][l], regs[y][l]);
                }
                dest = Some(check_reg(p, i.a)?);
            }
            op if op.is_alu_imm() => {
                let x = check_reg(p, i.b)?;
                for l in 0..LANES {
                    tmp[l] = op.apply(regs[x][l], i.c);
                }
                dest = Some(check_reg(p, i.a)?);
            }
            MOp::Mov => {
                tmp = regs[check_reg(p, i.b)?];
                dest = Some(check_reg(p, i.a)?);
            }
            MOp::Li => {
                tmp = [i.b; LANES];
                dest = Some(check_reg(p, i.a)?);
            }
            MOp::Ld => {
                tmp = mem[i.b as usize];
                let mut d = [0u8; LANES];
                for l in 0..LANES {
                    d[l] = bus[l] ^ tmp[l];
                }
                sink(addr, SiteKind::Bus, &d);
                bus = tmp;
                dest = Some(check_reg(p, i.a)?);
            }
            MOp::St => {
                let v = regs[check_reg(p, i.b)?];
                let mut d = [0u8; LANES];
                for l in 0..LANES {
                    d[l] = bus[l] ^ v[l];
                }
                sink(addr, SiteKind::Bus, &d);
                bus = v;
                mem[i.a as usize] = v;
            }
            MOp::B => next = i.a as usize,
            MOp::Ret => return Ok(regs[check_reg(p, i.a)?]),
            MOp::Beq | MOp::Bne => return Err(ExecError::NotBranchFree),
            _ => unreachable!(),
        }
        if let Some(r) = dest {
            let mut d = [0u8; LANES];
            for l in 0..LANES {
                d[l] = regs[r][l] ^ tmp[l];
            }
            sink(addr, SiteKind::Register(r as u8), &d);
            regs[r] = tmp;
        }
        pc = next;
    }
    Err(ExecError::StepLimit)
}
