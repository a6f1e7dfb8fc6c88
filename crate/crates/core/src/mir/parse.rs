use std::collections::HashMap;

use thiserror::Error;

use super::{
    Block, Definition, FunctionIR, Opcode, Operand, Operation, SecurityLabel, Temp,
    ValidationError, Weight,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MirError {
    #[error("{line}:{column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid function: {0}")]
    Invalid(#[from] ValidationError),
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Punct(char),
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    col: usize,
}

fn is_word_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '\''
}

fn tokenize(line: &str, lineno: usize) -> Result<Vec<Token>, MirError> {
    let mut out = Vec::new();
    let chars: Vec<char> = line.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '#' {
            break;
        }
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let col = i + 1;
        if is_word_char(c) {
            let start = i;
            while i < chars.len() && is_word_char(chars[i]) {
                i += 1;
            }
            out.push(Token {
                tok: Tok::Word(chars[start..i].iter().collect()),
                col,
            });
        } else if "():,=@/".contains(c) {
            out.push(Token {
                tok: Tok::Punct(c),
                col,
            });
            i += 1;
        } else {
            return Err(MirError::Syntax {
                line: lineno,
                column: col,
                message: format!("unexpected character `{c}`"),
            });
        }
    }
    Ok(out)
}

/// Cursor over the tokens of one line.
struct Line {
    toks: Vec<Token>,
    pos: usize,
    lineno: usize,
    len: usize,
}

impl Line {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, MirError> {
        let column = self
            .toks
            .get(self.pos)
            .map(|t| t.col)
            .unwrap_or(self.len + 1);
        Err(MirError::Syntax {
            line: self.lineno,
            column,
            message: message.into(),
        })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn word(&mut self, what: &str) -> Result<(String, usize), MirError> {
        match self.toks.get(self.pos) {
            Some(Token {
                tok: Tok::Word(w),
                col,
            }) => {
                let r = (w.clone(), *col);
                self.pos += 1;
                Ok(r)
            }
            _ => self.err(format!("expected {what}")),
        }
    }

    fn punct(&mut self, c: char) -> Result<(), MirError> {
        if self.peek() == Some(&Tok::Punct(c)) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected `{c}`"))
        }
    }

    fn eat_punct(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Punct(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn end(&self) -> Result<(), MirError> {
        if self.at_end() {
            Ok(())
        } else {
            self.err("unexpected trailing tokens")
        }
    }

    fn number(&mut self, what: &str, max: u64) -> Result<u64, MirError> {
        let save = self.pos;
        let (w, _) = self.word(what)?;
        let v = if let Some(hex) = w.strip_prefix("0x") {
            u64::from_str_radix(hex, 16).ok()
        } else {
            w.parse::<u64>().ok()
        };
        match v {
            Some(v) if v <= max => Ok(v),
            _ => {
                self.pos = save;
                self.err(format!("expected {what}"))
            }
        }
    }

    fn ident(&mut self, what: &str) -> Result<(String, usize), MirError> {
        let save = self.pos;
        let (w, col) = self.word(what)?;
        if w.starts_with(|c: char| c.is_ascii_alphabetic() || c == '_') {
            Ok((w, col))
        } else {
            self.pos = save;
            self.err(format!("expected {what}"))
        }
    }
}

#[derive(Debug)]
enum RawUse {
    Name(String),
    Imm(u8),
}

#[derive(Debug)]
struct RawOp {
    opcode: Opcode,
    optional: bool,
    def: Option<String>,
    uses: Vec<RawUse>,
    slot: Option<String>,
    target: Option<usize>,
}

fn raw_use(line: &mut Line, allow_imm: bool) -> Result<RawUse, MirError> {
    match line.peek() {
        Some(Tok::Word(w)) if w.starts_with(|c: char| c.is_ascii_digit()) => {
            if !allow_imm {
                return line.err("immediate not allowed here");
            }
            Ok(RawUse::Imm(line.number("8-bit immediate", 255)? as u8))
        }
        _ => {
            Ok(RawUse::Name(line.ident("temp")?.0))
        }
    }
}

fn slot(line: &mut Line) -> Result<String, MirError> {
    line.punct('@')?;
    Ok(line.ident("slot name")?.0)
}

fn parse_op(line: &mut Line) -> Result<RawOp, MirError> {
    let mut optional = false;
    if let Some(Tok::Word(w)) = line.peek() {
        let next = line.toks.get(line.pos + 1).map(|t| &t.tok);
        if w == "opt" && next.is_some() && next != Some(&Tok::Punct('=')) {
            optional = true;
            line.pos += 1;
        }
    }
    let mut def = None;
    let has_def = line.toks.get(line.pos + 1).map(|t| &t.tok) == Some(&Tok::Punct('='));
    if has_def {
        def = Some(line.ident("temp")?.0);
        line.punct('=')?;
    }
    let (mn, _) = line.word("opcode")?;
    let opcode = match Opcode::from_mnemonic(&mn) {
        Some(op) => op,
        None => {
            line.pos -= 1;
            return line.err(format!("unknown opcode `{mn}`"));
        }
    };
    if opcode.has_def() != def.is_some() {
        line.pos -= 1;
        return line.err(if def.is_some() {
            format!("`{mn}` defines no value")
        } else {
            format!("`{mn}` needs a destination")
        });
    }
    let mut op = RawOp {
        opcode,
        optional,
        def,
        uses: Vec::new(),
        slot: None,
        target: None,
    };
    match opcode {
        Opcode::Add | Opcode::Sub | Opcode::Xor | Opcode::And | Opcode::Or => {
            op.uses.push(raw_use(line, false)?);
            line.punct(',')?;
            op.uses.push(raw_use(line, true)?);
        }
        Opcode::Mov | Opcode::Copy | Opcode::Ret => op.uses.push(raw_use(line, false)?),
        Opcode::Li => op.uses.push(RawUse::Imm(line.number("8-bit immediate", 255)? as u8)),
        Opcode::Ld => op.slot = Some(slot(line)?),
        Opcode::St => {
            op.slot = Some(slot(line)?);
            line.punct(',')?;
            op.uses.push(raw_use(line, false)?);
        }
        Opcode::Beq | Opcode::Bne => {
            op.uses.push(raw_use(line, false)?);
            line.punct(',')?;
            op.uses.push(raw_use(line, false)?);
            line.punct(',')?;
            op.target = Some(line.number("block id", u16::MAX as u64)? as usize);
        }
        Opcode::B => op.target = Some(line.number("block id", u16::MAX as u64)? as usize),
        Opcode::Nop => {}
    }
    line.end()?;
    Ok(op)
}

fn parse_weight(line: &mut Line) -> Result<Weight, MirError> {
    let num = line.number("weight", u32::MAX as u64)?;
    let den = if line.eat_punct('/') {
        line.number("weight denominator", u32::MAX as u64)?
    } else {
        1
    };
    if den == 0 {
        line.pos -= 1;
        return line.err("zero denominator");
    }
    Ok(Weight::new(num, den))
}

/// Parses and validates one function in the textual IR.
pub fn parse_function(text: &str) -> Result<FunctionIR, MirError> {
    let mut name = None;
    let mut inputs: Vec<(String, Option<SecurityLabel>)> = Vec::new();
    let mut raw_blocks: Vec<(Weight, Vec<RawOp>)> = Vec::new();

    for (idx, src) in text.lines().enumerate() {
        let lineno = idx + 1;
        let toks = tokenize(src, lineno)?;
        if toks.is_empty() {
            continue;
        }
        let mut line = Line {
            toks,
            pos: 0,
            lineno,
            len: src.chars().count(),
        };
        if name.is_none() {
            match line.word("`func`")? {
                (w, _) if w == "func" => {}
                _ => {
                    line.pos = 0;
                    return line.err("expected `func`");
                }
            }
            name = Some(line.ident("function name")?.0);
            line.punct('(')?;
            if !line.eat_punct(')') {
                loop {
                    let (n, _) = line.ident("input name")?;
                    let label = if line.eat_punct(':') {
                        let (l, _) = line.word("security label")?;
                        match SecurityLabel::parse(&l) {
                            Some(l) => Some(l),
                            None => {
                                line.pos -= 1;
                                return line.err(format!("unknown security label `{l}`"));
                            }
                        }
                    } else {
                        None
                    };
                    inputs.push((n, label));
                    if line.eat_punct(')') {
                        break;
                    }
                    line.punct(',')?;
                }
            }
            line.end()?;
            continue;
        }
        if line.peek() == Some(&Tok::Word("block".into())) {
            line.pos += 1;
            let id = line.number("block id", u16::MAX as u64)? as usize;
            if id != raw_blocks.len() {
                line.pos -= 1;
                return line.err(format!("expected block {}", raw_blocks.len()));
            }
            let mut weight = Weight::from_integer(1);
            if !line.at_end() {
                match line.word("`weight`")? {
                    (w, _) if w == "weight" => weight = parse_weight(&mut line)?,
                    _ => {
                        line.pos -= 1;
                        return line.err("expected `weight`");
                    }
                }
            }
            line.end()?;
            raw_blocks.push((weight, Vec::new()));
            continue;
        }
        if raw_blocks.is_empty() {
            return line.err("operation outside of a block");
        }
        let op = parse_op(&mut line)?;
        raw_blocks.last_mut().unwrap().1.push(op);
    }

    let Some(name) = name else {
        return Err(MirError::Syntax {
            line: text.lines().count().max(1),
            column: 1,
            message: "missing `func` header".into(),
        });
    };

    // Resolve names: inputs first, then definitions in textual order.
    let mut f = FunctionIR {
        name,
        temps: Vec::new(),
        slots: Vec::new(),
        blocks: Vec::new(),
    };
    let mut names: HashMap<String, usize> = HashMap::new();
    for (n, label) in &inputs {
        if names.contains_key(n) {
            return Err(ValidationError::Redefinition(n.clone()).into());
        }
        names.insert(n.clone(), f.temps.len());
        f.temps.push(Temp {
            name: n.clone(),
            def: match label {
                Some(l) => Definition::Input(*l),
                None => Definition::UnlabeledInput,
            },
        });
    }
    let mut next_op = 0;
    for (_, ops) in &raw_blocks {
        for op in ops {
            if let Some(n) = &op.def {
                if names.contains_key(n) {
                    return Err(ValidationError::Redefinition(n.clone()).into());
                }
                names.insert(n.clone(), f.temps.len());
                f.temps.push(Temp {
                    name: n.clone(),
                    def: Definition::Op(next_op),
                });
            }
            next_op += 1;
        }
    }
    let mut next_op = 0;
    for (bi, (weight, ops)) in raw_blocks.into_iter().enumerate() {
        let mut block = Block::new(bi);
        block.weight = weight;
        for raw in ops {
            let mut op = Operation::new(raw.opcode);
            op.id = next_op;
            next_op += 1;
            op.optional = raw.optional;
            op.def = raw.def.map(|n| names[&n]);
            for u in raw.uses {
                op.uses.push(match u {
                    RawUse::Imm(v) => Operand::Imm(v),
                    RawUse::Name(n) => match names.get(&n) {
                        Some(&t) => Operand::Temp(t),
                        None => return Err(ValidationError::UndefinedTemp(n).into()),
                    },
                });
            }
            op.slot = raw.slot.map(|s| match f.slot_by_name(&s) {
                Some(id) => id,
                None => {
                    f.slots.push(s);
                    f.slots.len() - 1
                }
            });
            op.target = raw.target;
            block.ops.push(op);
        }
        f.blocks.push(block);
    }
    f.validate()?;
    Ok(f)
}
