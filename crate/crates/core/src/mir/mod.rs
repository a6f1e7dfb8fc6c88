//! Policy-annotated low-level IR.
//!
//! A [`FunctionIR`] is a loop-free sequence of basic blocks laid out in a
//! topological order. Every temp is 8 bits wide and has exactly one static
//! definition: either a function input (carrying a [`SecurityLabel`]) or an
//! operation. Values that must merge across control flow go through
//! symbolic memory slots (`@name`), which keeps the temps SSA-like without
//! phi nodes.

mod cfg;
mod parse;
mod print;
mod validate;

use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

pub use cfg::{build_cfg, BlockGraph, Edge, EdgeKind};
pub use parse::{parse_function, MirError};
pub use print::serialize_function;
pub(crate) use print::describe_op;
pub use validate::ValidationError;

pub type BlockId = usize;
pub type OpId = usize;
pub type TempId = usize;
pub type SlotId = usize;

/// Execution-frequency estimate of a block.
pub type Weight = Ratio<u64>;

/// All temps share this width.
pub const TEMP_WIDTH_BITS: u32 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SecurityLabel {
    Secret,
    Public,
    Random,
}

impl SecurityLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            SecurityLabel::Secret => "secret",
            SecurityLabel::Public => "public",
            SecurityLabel::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "secret" => Some(SecurityLabel::Secret),
            "public" => Some(SecurityLabel::Public),
            "random" => Some(SecurityLabel::Random),
            _ => None,
        }
    }
}

impl fmt::Display for SecurityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Opcode {
    Add,
    Sub,
    Xor,
    And,
    Or,
    Mov,
    Li,
    Ld,
    St,
    Beq,
    Bne,
    B,
    Ret,
    Nop,
    Copy,
}

impl Opcode {
    pub const ALL: [Opcode; 15] = [
        Opcode::Add,
        Opcode::Sub,
        Opcode::Xor,
        Opcode::And,
        Opcode::Or,
        Opcode::Mov,
        Opcode::Li,
        Opcode::Ld,
        Opcode::St,
        Opcode::Beq,
        Opcode::Bne,
        Opcode::B,
        Opcode::Ret,
        Opcode::Nop,
        Opcode::Copy,
    ];

    pub fn mnemonic(self) -> &'static str {
        match self {
            Opcode::Add => "add",
            Opcode::Sub => "sub",
            Opcode::Xor => "xor",
            Opcode::And => "and",
            Opcode::Or => "or",
            Opcode::Mov => "mov",
            Opcode::Li => "li",
            Opcode::Ld => "ld",
            Opcode::St => "st",
            Opcode::Beq => "beq",
            Opcode::Bne => "bne",
            Opcode::B => "b",
            Opcode::Ret => "ret",
            Opcode::Nop => "nop",
            Opcode::Copy => "copy",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<Self> {
        Opcode::ALL.into_iter().find(|op| op.mnemonic() == s)
    }

    pub fn is_terminator(self) -> bool {
        matches!(self, Opcode::Beq | Opcode::Bne | Opcode::B | Opcode::Ret)
    }

    pub fn is_conditional_branch(self) -> bool {
        matches!(self, Opcode::Beq | Opcode::Bne)
    }

    pub fn is_alu(self) -> bool {
        matches!(
            self,
            Opcode::Add | Opcode::Sub | Opcode::Xor | Opcode::And | Opcode::Or
        )
    }

    pub fn is_commutative(self) -> bool {
        matches!(self, Opcode::Add | Opcode::Xor | Opcode::And | Opcode::Or)
    }

    pub fn has_def(self) -> bool {
        matches!(
            self,
            Opcode::Add
                | Opcode::Sub
                | Opcode::Xor
                | Opcode::And
                | Opcode::Or
                | Opcode::Mov
                | Opcode::Li
                | Opcode::Ld
                | Opcode::Copy
        )
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Operand {
    Temp(TempId),
    Imm(u8),
}

impl Operand {
    pub fn temp(self) -> Option<TempId> {
        match self {
            Operand::Temp(t) => Some(t),
            Operand::Imm(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Operation {
    pub id: OpId,
    pub opcode: Opcode,
    pub def: Option<TempId>,
    pub uses: Vec<Operand>,
    /// Memory slot of an `ld`/`st`.
    pub slot: Option<SlotId>,
    /// Branch target of `beq`/`bne`/`b`.
    pub target: Option<BlockId>,
    pub optional: bool,
}

impl Operation {
    pub fn new(opcode: Opcode) -> Self {
        Operation {
            id: 0,
            opcode,
            def: None,
            uses: Vec::new(),
            slot: None,
            target: None,
            optional: false,
        }
    }

    /// Commutative with two register operands, so operand order is a free choice.
    pub fn commutative(&self) -> bool {
        self.opcode.is_commutative()
            && self.uses.len() == 2
            && self.uses.iter().all(|u| matches!(u, Operand::Temp(_)))
    }

    pub fn used_temps(&self) -> impl Iterator<Item = TempId> + '_ {
        self.uses.iter().filter_map(|u| u.temp())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Definition {
    Input(SecurityLabel),
    /// Input declared without a label; rejected by validation.
    UnlabeledInput,
    Op(OpId),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Temp {
    pub name: String,
    pub def: Definition,
}

impl Temp {
    pub fn width(&self) -> u32 {
        TEMP_WIDTH_BITS
    }

    pub fn label(&self) -> Option<SecurityLabel> {
        match self.def {
            Definition::Input(l) => Some(l),
            _ => None,
        }
    }

    pub fn is_input(&self) -> bool {
        matches!(self.def, Definition::Input(_) | Definition::UnlabeledInput)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub id: BlockId,
    pub weight: Weight,
    pub ops: Vec<Operation>,
}

impl Block {
    pub fn new(id: BlockId) -> Self {
        Block {
            id,
            weight: Weight::from_integer(1),
            ops: Vec::new(),
        }
    }

    pub fn terminator(&self) -> Option<&Operation> {
        self.ops.last().filter(|op| op.opcode.is_terminator())
    }

    /// Operands compared by the terminating conditional branch, if any.
    pub fn branch_condition(&self) -> Option<&[Operand]> {
        self.terminator()
            .filter(|op| op.opcode.is_conditional_branch())
            .map(|op| op.uses.as_slice())
    }

    /// Successor blocks, fall-through edge first.
    pub fn successors(&self) -> Vec<BlockId> {
        match self.terminator() {
            Some(op) if op.opcode.is_conditional_branch() => {
                vec![self.id + 1, op.target.expect("branch target")]
            }
            Some(op) if op.opcode == Opcode::B => vec![op.target.expect("jump target")],
            Some(_) => Vec::new(),
            None => vec![self.id + 1],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FunctionIR {
    pub name: String,
    /// Inputs first, in signature order, then operation-defined temps.
    pub temps: Vec<Temp>,
    pub slots: Vec<String>,
    pub blocks: Vec<Block>,
}

impl FunctionIR {
    pub fn inputs(&self) -> impl Iterator<Item = (TempId, &Temp)> {
        self.temps.iter().enumerate().filter(|(_, t)| t.is_input())
    }

    pub fn input_labels(&self) -> Vec<(TempId, SecurityLabel)> {
        self.temps
            .iter()
            .enumerate()
            .filter_map(|(i, t)| t.label().map(|l| (i, l)))
            .collect()
    }

    pub fn ops(&self) -> impl Iterator<Item = &Operation> {
        self.blocks.iter().flat_map(|b| b.ops.iter())
    }

    pub fn num_ops(&self) -> usize {
        self.blocks.iter().map(|b| b.ops.len()).sum()
    }

    pub fn op(&self, id: OpId) -> &Operation {
        self.ops().find(|o| o.id == id).expect("operation id")
    }

    /// Block containing the operation.
    pub fn block_of(&self, id: OpId) -> BlockId {
        self.blocks
            .iter()
            .find(|b| b.ops.iter().any(|o| o.id == id))
            .map(|b| b.id)
            .expect("operation id")
    }

    pub fn temp_by_name(&self, name: &str) -> Option<TempId> {
        self.temps.iter().position(|t| t.name == name)
    }

    pub fn slot_by_name(&self, name: &str) -> Option<SlotId> {
        self.slots.iter().position(|s| s == name)
    }

    /// Operation defining `t`, if it is not an input.
    pub fn def_op(&self, t: TempId) -> Option<&Operation> {
        match self.temps[t].def {
            Definition::Op(id) => Some(self.op(id)),
            _ => None,
        }
    }

    /// Operations reading `t`.
    pub fn users(&self, t: TempId) -> Vec<&Operation> {
        self.ops().filter(|o| o.used_temps().any(|u| u == t)).collect()
    }

    /// Reassigns operation ids in layout order, refreshes block ids and
    /// temp definition sites.
    pub fn renumber(&mut self) {
        let mut next = 0;
        for (bi, block) in self.blocks.iter_mut().enumerate() {
            block.id = bi;
            for op in &mut block.ops {
                op.id = next;
                next += 1;
                if let Some(d) = op.def {
                    self.temps[d].def = Definition::Op(op.id);
                }
            }
        }
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        validate::validate(self)
    }

    /// Adds a fresh temp whose name does not clash with existing ones.
    pub fn fresh_temp(&mut self, base: &str) -> TempId {
        let mut name = format!("{base}'");
        while self.temp_by_name(&name).is_some() {
            name.push('\'');
        }
        self.temps.push(Temp {
            name,
            def: Definition::UnlabeledInput,
        });
        self.temps.len() - 1
    }

    pub fn fresh_slot(&mut self, base: &str) -> SlotId {
        let mut name = format!("{base}'");
        while self.slot_by_name(&name).is_some() {
            name.push('\'');
        }
        self.slots.push(name);
        self.slots.len() - 1
    }
}
