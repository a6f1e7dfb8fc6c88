use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::mir::{BlockId, Definition, FunctionIR, OpId, Opcode, Operand, SecurityLabel, TempId};

/// A public quantity used as a bitwise mask.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Atom {
    Temp(TempId),
    Imm(u8),
}

/// Bitwise boolean polynomial over public atoms, in algebraic normal form.
/// The empty monomial is the all-ones byte.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Poly(BTreeSet<BTreeSet<Atom>>);

impl Poly {
    pub fn zero() -> Self {
        Poly(BTreeSet::new())
    }

    pub fn one() -> Self {
        Poly(BTreeSet::from([BTreeSet::new()]))
    }

    pub fn atom(a: Atom) -> Self {
        match a {
            Atom::Imm(0) => Self::zero(),
            Atom::Imm(0xFF) => Self::one(),
            a => Poly(BTreeSet::from([BTreeSet::from([a])])),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_one(&self) -> bool {
        self.0.len() == 1 && self.0.iter().next().unwrap().is_empty()
    }

    pub fn add(&self, o: &Self) -> Self {
        Poly(self.0.symmetric_difference(&o.0).cloned().collect())
    }

    pub fn mul(&self, o: &Self) -> Self {
        let mut out = BTreeSet::new();
        for a in &self.0 {
            for b in &o.0 {
                let m: BTreeSet<Atom> = a.union(b).copied().collect();
                if !out.remove(&m) {
                    out.insert(m);
                }
            }
        }
        Poly(out)
    }
}

/// `⊕ᵢ (xᵢ & Cᵢ) ⊕ π` over secret and random inputs `xᵢ`, with public
/// coefficients `Cᵢ` and an opaque public part `π`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct XorForm {
    pub secret: BTreeMap<TempId, Poly>,
    pub random: BTreeMap<TempId, Poly>,
}

fn add_coeffs(a: &BTreeMap<TempId, Poly>, b: &BTreeMap<TempId, Poly>) -> BTreeMap<TempId, Poly> {
    let mut out = a.clone();
    for (&k, p) in b {
        let sum = out.get(&k).map_or_else(|| p.clone(), |q| q.add(p));
        if sum.is_zero() {
            out.remove(&k);
        } else {
            out.insert(k, sum);
        }
    }
    out
}

fn mul_coeffs(a: &BTreeMap<TempId, Poly>, m: &Poly) -> BTreeMap<TempId, Poly> {
    a.iter()
        .map(|(&k, p)| (k, p.mul(m)))
        .filter(|(_, p)| !p.is_zero())
        .collect()
}

impl XorForm {
    fn xor(&self, o: &Self) -> Self {
        XorForm {
            secret: add_coeffs(&self.secret, &o.secret),
            random: add_coeffs(&self.random, &o.random),
        }
    }

    fn and(&self, m: &Poly) -> Self {
        XorForm {
            secret: mul_coeffs(&self.secret, m),
            random: mul_coeffs(&self.random, m),
        }
    }

    /// Do the randoms `rs` cover every bit a secret can reach?
    fn covered_by<'a>(&self, rs: impl Iterator<Item = &'a Poly>) -> bool {
        let mut uncovered = Poly::one();
        for c in rs {
            uncovered = uncovered.mul(&Poly::one().add(c));
        }
        self.secret.values().all(|s| s.mul(&uncovered).is_zero())
    }
}

/// Security type of a temp. Sets hold input temp ids.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct InferredType {
    pub label: SecurityLabel,
    /// Randoms that mask every secret-dependent bit of the value.
    pub dominant: BTreeSet<TempId>,
    pub secret_support: BTreeSet<TempId>,
    pub random_support: BTreeSet<TempId>,
    /// Exact shape when the value is an XOR of masked inputs.
    #[serde(skip)]
    pub form: Option<XorForm>,
}

impl InferredType {
    pub fn public() -> Self {
        Self::from_form(XorForm::default())
    }

    fn label_of(dominant: &BTreeSet<TempId>, secret_support: &BTreeSet<TempId>) -> SecurityLabel {
        if !dominant.is_empty() {
            SecurityLabel::Random
        } else if !secret_support.is_empty() {
            SecurityLabel::Secret
        } else {
            SecurityLabel::Public
        }
    }

    pub fn from_sets(dominant: BTreeSet<TempId>, secret_support: BTreeSet<TempId>, random_support: BTreeSet<TempId>) -> Self {
        let form = (secret_support.is_empty() && random_support.is_empty()).then(XorForm::default);
        InferredType {
            label: Self::label_of(&dominant, &secret_support),
            dominant,
            secret_support,
            random_support,
            form,
        }
    }

    pub fn from_form(form: XorForm) -> Self {
        let secret_support: BTreeSet<TempId> = form.secret.keys().copied().collect();
        let random_support: BTreeSet<TempId> = form.random.keys().copied().collect();
        let uniform = form.random.iter().filter(|(_, c)| c.is_one()).map(|(&r, _)| r);
        let mut dominant: BTreeSet<TempId> = uniform.collect();
        if !secret_support.is_empty() {
            for (&r, c) in &form.random {
                if form.covered_by(std::iter::once(c)) {
                    dominant.insert(r);
                }
            }
            if dominant.is_empty() && form.covered_by(form.random.values()) {
                dominant = random_support.clone();
            }
        }
        InferredType {
            label: Self::label_of(&dominant, &secret_support),
            dominant,
            secret_support,
            random_support,
            form: Some(form),
        }
    }

    pub fn input(t: TempId, label: SecurityLabel) -> Self {
        let one = BTreeMap::from([(t, Poly::one())]);
        match label {
            SecurityLabel::Public => Self::public(),
            SecurityLabel::Secret => Self::from_form(XorForm {
                secret: one,
                random: BTreeMap::new(),
            }),
            SecurityLabel::Random => Self::from_form(XorForm {
                secret: BTreeMap::new(),
                random: one,
            }),
        }
    }

    /// Randoms the value is a bijection of, all else fixed.
    fn uniform(&self) -> BTreeSet<TempId> {
        match &self.form {
            Some(f) => f.random.iter().filter(|(_, c)| c.is_one()).map(|(&r, _)| r).collect(),
            None => self.dominant.clone(),
        }
    }

    fn supports(a: &Self, b: &Self) -> (BTreeSet<TempId>, BTreeSet<TempId>) {
        (
            a.secret_support.union(&b.secret_support).copied().collect(),
            a.random_support.union(&b.random_support).copied().collect(),
        )
    }

    /// A uniform mask of one side that the other side does not touch survives.
    fn surviving_uniform(a: &Self, b: &Self) -> BTreeSet<TempId> {
        let mut dom: BTreeSet<TempId> = a.uniform().difference(&b.random_support).copied().collect();
        dom.extend(b.uniform().difference(&a.random_support));
        dom
    }

    /// Type of `a ^ b`: a random dominating both sides cancels.
    pub fn xor(a: &Self, b: &Self) -> Self {
        if let (Some(fa), Some(fb)) = (&a.form, &b.form) {
            return Self::from_form(fa.xor(fb));
        }
        let dom = Self::surviving_uniform(a, b);
        let (ua, ub) = (a.uniform(), b.uniform());
        let both: BTreeSet<TempId> = ua.intersection(&ub).copied().collect();
        let (sec, rand) = Self::supports(a, b);
        let rand = rand.into_iter().filter(|r| !both.contains(r)).collect();
        Self::from_sets(dom, sec, rand)
    }

    /// Type of `a + b` / `a - b`: bijective in each operand, nothing cancels.
    pub fn additive(a: &Self, b: &Self) -> Self {
        let dom = Self::surviving_uniform(a, b);
        let (sec, rand) = Self::supports(a, b);
        Self::from_sets(dom, sec, rand)
    }

    /// Type of `a & b` / `a | b` when neither side is a known public mask.
    pub fn nonlinear(a: &Self, b: &Self) -> Self {
        let (sec, rand) = Self::supports(a, b);
        Self::from_sets(BTreeSet::new(), sec, rand)
    }

    /// Type of `a & m` (or `a | m` when `or` is set) for a public mask `m`.
    pub fn masked(a: &Self, m: &Poly, or: bool) -> Self {
        let Some(f) = &a.form else {
            return Self::nonlinear(a, &Self::public());
        };
        let m = if or { Poly::one().add(m) } else { m.clone() };
        Self::from_form(f.and(&m))
    }

    /// Join over values that may reach a program point.
    pub fn merge(a: &Self, b: &Self) -> Self {
        if a.form.is_some() && a.form == b.form {
            return a.clone();
        }
        let dom = a.uniform().intersection(&b.uniform()).copied().collect();
        let (sec, rand) = Self::supports(a, b);
        Self::from_sets(dom, sec, rand)
    }
}

/// Per-temp types, indexed by temp id.
pub type TypeMap = Vec<InferredType>;

/// Stores to each slot that may reach each operation; `None` stands for the
/// zero-initialised cell.
pub(crate) fn reaching_stores(f: &FunctionIR) -> Vec<Vec<BTreeSet<Option<OpId>>>> {
    let nslots = f.slots.len();
    let nblocks = f.blocks.len();
    let mut block_in: Vec<Vec<BTreeSet<Option<OpId>>>> = vec![vec![BTreeSet::new(); nslots]; nblocks];
    for s in 0..nslots {
        block_in[0][s].insert(None);
    }
    let num_ops = f.num_ops();
    let mut at_op: Vec<Vec<BTreeSet<Option<OpId>>>> = vec![Vec::new(); num_ops];
    for b in &f.blocks {
        let mut cur = block_in[b.id].clone();
        for op in &b.ops {
            at_op[op.id] = cur.clone();
            if op.opcode == Opcode::St {
                let s = op.slot.unwrap();
                cur[s] = BTreeSet::from([Some(op.id)]);
            }
        }
        for succ in b.successors() {
            for s in 0..nslots {
                let add = cur[s].clone();
                block_in[succ][s].extend(add);
            }
        }
    }
    at_op
}

/// Public mask carried by an operand, if it is public.
fn public_mask(types: &TypeMap, origin: &[TempId], u: Operand) -> Option<Poly> {
    match u {
        Operand::Imm(k) => Some(Poly::atom(Atom::Imm(k))),
        Operand::Temp(t) if types[t].label == SecurityLabel::Public && types[t].random_support.is_empty() => {
            Some(Poly::atom(Atom::Temp(origin[t])))
        }
        Operand::Temp(_) => None,
    }
}

/// Forward type inference in block order. Implicit flows are not tracked.
pub fn infer_types(f: &FunctionIR) -> TypeMap {
    let mut types = vec![InferredType::public(); f.temps.len()];
    for (t, temp) in f.temps.iter().enumerate() {
        if let Definition::Input(l) = temp.def {
            types[t] = InferredType::input(t, l);
        }
    }
    let origin = value_origin(f);
    let reach = reaching_stores(f);
    let store_type = |types: &TypeMap, st: Option<OpId>| -> InferredType {
        match st {
            None => InferredType::public(),
            Some(id) => {
                let t = f.op(id).uses[0].temp().unwrap();
                types[t].clone()
            }
        }
    };
    for op in f.ops() {
        let Some(d) = op.def else { continue };
        let ty = |u: &Operand| match u {
            Operand::Temp(t) => types[*t].clone(),
            Operand::Imm(_) => InferredType::public(),
        };
        let new = match op.opcode {
            Opcode::Xor => InferredType::xor(&ty(&op.uses[0]), &ty(&op.uses[1])),
            Opcode::Add | Opcode::Sub => InferredType::additive(&ty(&op.uses[0]), &ty(&op.uses[1])),
            Opcode::And | Opcode::Or => {
                let or = op.opcode == Opcode::Or;
                let (a, b) = (op.uses[0], op.uses[1]);
                match (public_mask(&types, &origin, b), public_mask(&types, &origin, a)) {
                    (Some(m), _) => InferredType::masked(&ty(&a), &m, or),
                    (None, Some(m)) => InferredType::masked(&ty(&b), &m, or),
                    (None, None) => InferredType::nonlinear(&ty(&a), &ty(&b)),
                }
            }
            Opcode::Mov | Opcode::Copy => ty(&op.uses[0]),
            Opcode::Li => InferredType::public(),
            Opcode::Ld => {
                let mut it = reach[op.id][op.slot.unwrap()].iter();
                let first = it.next().copied().flatten();
                let mut acc = store_type(&types, first);
                for &st in it {
                    acc = InferredType::merge(&acc, &store_type(&types, st));
                }
                acc
            }
            _ => unreachable!("opcode without def"),
        };
        types[d] = new;
    }
    types
}

/// Type of the value carried by a branch condition (`a ^ b` decides `a == b`).
pub fn condition_type(f: &FunctionIR, types: &TypeMap, b: BlockId) -> Option<InferredType> {
    let cond = f.blocks[b].branch_condition()?;
    let ty = |u: &Operand| match u {
        Operand::Temp(t) => types[*t].clone(),
        Operand::Imm(_) => InferredType::public(),
    };
    Some(InferredType::xor(&ty(&cond[0]), &ty(&cond[1])))
}

/// Temps that are plain copies of another temp map to their source.
pub fn value_origin(f: &FunctionIR) -> Vec<TempId> {
    let mut origin: Vec<TempId> = (0..f.temps.len()).collect();
    for op in f.ops() {
        if matches!(op.opcode, Opcode::Mov | Opcode::Copy) {
            let src = op.uses[0].temp().unwrap();
            origin[op.def.unwrap()] = origin[src];
        }
    }
    origin
}
